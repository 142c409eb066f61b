"""Slow, independent reference implementations used only by the tests."""

from __future__ import annotations

import math

import numpy as np


def cox_de_boor(t, k, m, s):
    """Textbook recursive B-spline b_{m,k}(s), 0-based m, right-continuous, 0/0 := 0."""
    if k == 1:
        return 1.0 if t[m] <= s < t[m + 1] else 0.0
    left = 0.0
    if t[m + k - 1] != t[m]:
        left = (s - t[m]) / (t[m + k - 1] - t[m]) * cox_de_boor(t, k - 1, m, s)
    right = 0.0
    if t[m + k] != t[m + 1]:
        right = (t[m + k] - s) / (t[m + k] - t[m + 1]) * cox_de_boor(t, k - 1, m + 1, s)
    return left + right


def basis_oracle(t, k, s):
    t = list(map(float, t))
    M = len(t) - k
    U = t[-1]
    if s == U:
        # value at the right end is the limit from the left
        s = math.nextafter(U, -math.inf)
        vals = [cox_de_boor(t, k, m, s) for m in range(M)]
        # renormalise the O(ulp) limit error
        total = sum(vals)
        return np.array([v / total for v in vals])
    return np.array([cox_de_boor(t, k, m, s) for m in range(M)])


def naive_bernoulli_loglik(logits, y):
    p = 1.0 / (1.0 + np.exp(-np.asarray(logits, dtype=float)))
    y = np.asarray(y)
    return float(np.sum(np.where(y == 1, np.log(p), np.log(1.0 - p))))
