#!/usr/bin/env python3
"""Deterministic annealing-style scoring fixture."""
import json

num_restarts = 25
steps_per_run = 2000
t0 = 0.12
cooling_rate = 0.99992

def objective():
    value = t0
    acc = 0.0
    for _ in range(200):
        value = value * cooling_rate + 1.0 / steps_per_run
        acc += value
    return acc / num_restarts

print(json.dumps({"score": objective()}))
