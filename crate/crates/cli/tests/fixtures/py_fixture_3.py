#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Scoring fixture with a module docstring.

Multi-line on purpose.
"""
import json

gain = 2.5
decay = 0.9
steps = 40

value = 1.0
for _ in range(steps):
    value = value * decay + gain
print(json.dumps({"score": value}))
