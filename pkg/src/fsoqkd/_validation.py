"""Small argument checkers shared by the public functions and estimators."""

from __future__ import annotations

import math

import numpy as np


class DomainError(ValueError):
    """A value lies outside the mathematical domain of an operation."""


def check_probability(value, name, *, open_low=False, open_high=False):
    value = float(value)
    low_ok = value > 0 if open_low else value >= 0
    high_ok = value < 1 if open_high else value <= 1
    if not (low_ok and high_ok) or math.isnan(value):
        lo = "(" if open_low else "["
        hi = ")" if open_high else "]"
        raise DomainError(f"{name} must lie in {lo}0, 1{hi}, got {value!r}")
    return value


def check_positive(value, name, *, allow_zero=False):
    value = float(value)
    if math.isnan(value) or value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be {bound}, got {value!r}")
    return value


def check_count(value, name, *, minimum=1):
    if int(value) != value or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_sorted(values, name):
    values = np.asarray(values)
    if values.size > 1 and np.any(np.diff(values) < 0):
        raise ValueError(f"{name} must be nondecreasing")
    return values


def seconds_to_ns(seconds):
    """Convert a duration to integer nanoseconds, rejecting sub-ns remainders."""
    ns = round(float(seconds) * 1e9)
    if ns <= 0:
        raise ValueError(f"duration {seconds!r} s is shorter than 1 ns")
    return int(ns)
