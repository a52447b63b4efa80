"""Weighted isotonic regression for CVR vectors.

``pava`` takes values ordered by increasing price and returns the closest
(weighted least squares) non-increasing sequence.  ``qp_oracle`` solves the
same program by brute force over contiguous block partitions.
"""

from __future__ import annotations

import itertools

import numpy as np


class SizeError(ValueError):
    pass


def _pava_up(y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Stack-based PAVA producing a non-decreasing fit."""
    means: list[float] = []
    weights: list[float] = []
    counts: list[int] = []
    for yi, wi in zip(y, w):
        m, ww, c = float(yi), float(wi), 1
        while means and means[-1] >= m:
            pm, pw, pc = means.pop(), weights.pop(), counts.pop()
            m = (pm * pw + m * ww) / (pw + ww)
            ww += pw
            c += pc
        means.append(m)
        weights.append(ww)
        counts.append(c)
    return np.repeat(means, counts)


def _prep(values, weights):
    y = np.asarray(values, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("need a non-empty 1-d sequence")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != y.shape:
        raise ValueError("weights must match values")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be positive and finite")
    return y, w


def pava(values, weights=None) -> np.ndarray:
    """Non-increasing least-squares fit; ``values`` ordered by increasing price."""
    y, w = _prep(values, weights)
    return _pava_up(y[::-1], w[::-1])[::-1]


def qp_oracle(values, weights=None, max_len: int = 12) -> np.ndarray:
    """Exact minimiser by enumerating every contiguous block partition.

    Each block takes its weighted mean; among partitions whose block means are
    non-increasing, the one with least weighted squared error wins.  The
    objective is strictly convex so the minimiser is unique.
    """
    y, w = _prep(values, weights)
    n = len(y)
    if n > max_len:
        raise SizeError(f"oracle limited to {max_len} values, got {n}")
    best, best_err = None, np.inf
    for cuts in itertools.product((False, True), repeat=n - 1):
        bounds = [0] + [k + 1 for k, c in enumerate(cuts) if c] + [n]
        fit = np.empty(n)
        for a, b in zip(bounds, bounds[1:]):
            fit[a:b] = np.dot(w[a:b], y[a:b]) / w[a:b].sum()
        if np.any(np.diff(fit) > 1e-12):
            continue
        err = float(np.dot(w, (fit - y) ** 2))
        if err < best_err:
            best, best_err = fit, err
    return best


def calibrate_vector(q_levels, weights=None) -> np.ndarray:
    """Calibrate one CVR vector given in ladder-level order (price descending).

    The result is non-decreasing along levels, i.e. non-increasing in price.
    """
    y, w = _prep(q_levels, weights)
    out = _pava_up(y, w)
    if np.any(out < -1e-12) or np.any(out > 1 + 1e-12):
        raise ArithmeticError("pooled CVR left [0, 1]; inputs were not probabilities")
    return np.clip(out, 0.0, 1.0)


def calibrate_population(Q, weights=None) -> np.ndarray:
    """Row-wise calibration of an (N, J) matrix in ladder-level order.

    Identical rows are calibrated once, which makes binned predictors cheap.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.size == 0:
        return Q.copy()
    uniq, inv = np.unique(Q, axis=0, return_inverse=True)
    cal = np.vstack([calibrate_vector(row, weights) for row in uniq])
    return cal[inv.reshape(-1)]


def is_monotone_levels(Q, tol: float = 1e-12) -> np.ndarray:
    """Per-row check that CVR does not fall as the coupon grows."""
    Q = np.atleast_2d(Q)
    return np.all(np.diff(Q, axis=1) >= -tol, axis=1)
