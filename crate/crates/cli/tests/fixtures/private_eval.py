#!/usr/bin/env python3
"""Deterministic stand-in for a held-out judge: scores a program file by
counting its non-blank lines and reports a rating-style metric."""
import json
import sys

with open(sys.argv[1], "rb") as handle:
    lines = [l for l in handle.read().split(b"\n") if l.strip()]
score = float(len(lines))
print(json.dumps({"score": score, "metrics": {"rating_delta": score * 10.0}}))
