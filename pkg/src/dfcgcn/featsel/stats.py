"""Welch two-sample t-test and Benjamini-Hochberg FDR control."""
from __future__ import annotations

import numpy as np
from scipy.special import betainc

from ..errors import ValidationError


def student_t_sf2(t: float, df: float) -> float:
    """Two-sided tail probability P(|T| >= |t|) via the regularized incomplete beta."""
    if not np.isfinite(t):
        return 0.0
    x = df / (df + t * t)
    return float(min(1.0, betainc(0.5 * df, 0.5, x)))


def welch_ttest(a, b) -> tuple[float, float]:
    """Welch's unequal-variance t statistic and two-sided p value.

    Returns ``(t, p)`` with ``t`` positive when ``mean(a) > mean(b)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValidationError("welch_ttest needs at least 2 observations per group")
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0:
        if diff == 0:
            return 0.0, 1.0
        return float(np.copysign(np.inf, diff)), 0.0
    t = diff / np.sqrt(se2)
    df = se2 * se2 / (va * va / (a.size - 1) + vb * vb / (b.size - 1))
    return float(t), student_t_sf2(t, df)


def bh_fdr(pvals, alpha: float = 0.05) -> np.ndarray:
    """Benjamini-Hochberg step-up. Returns the boolean rejection mask."""
    p = np.asarray(pvals, dtype=float)
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool)
    ps = np.sort(p)
    below = ps <= alpha * np.arange(1, m + 1) / m
    if not below.any():
        return np.zeros(m, dtype=bool)
    k = np.flatnonzero(below)[-1]
    return p <= ps[k]


def ttest_fdr_select(X, y, alpha: float = 0.05, min_keep: int = 0):
    """Welch test of every column of ``X`` between ``y == 1`` and ``y == 0``, then BH.

    Returns ``(selected_indices, t_stats, p_values)``. When fewer than
    ``min_keep`` columns survive, the smallest-p columns fill the gap.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    stats = [welch_ttest(X[y == 1, k], X[y == 0, k]) for k in range(X.shape[1])]
    t = np.array([s[0] for s in stats])
    p = np.array([s[1] for s in stats])
    keep = bh_fdr(p, alpha) if p.size else np.zeros(0, dtype=bool)
    if keep.sum() < min_keep:
        for k in np.argsort(p, kind="stable"):
            if keep.sum() >= min(min_keep, p.size):
                break
            keep[k] = True
    return np.flatnonzero(keep), t, p
