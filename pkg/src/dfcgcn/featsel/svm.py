"""Linear SVM by cyclic subgradient descent and recursive feature elimination."""
from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from .report import SelectionReport


def standardize(X):
    """Zero-mean, unit-variance columns; constant columns become all-zero."""
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd_safe = np.where(sd > 0, sd, 1.0)
    Z = (X - mu) / sd_safe
    Z[:, sd == 0] = 0.0
    return Z


def _pm1(y):
    y = np.asarray(y)
    vals = np.unique(y)
    if vals.size != 2:
        raise ValidationError("linear SVM needs exactly two classes")
    if set(vals.tolist()) <= {-1, 1}:
        return y.astype(float)
    return np.where(y == vals[1], 1.0, -1.0)


def train_linear_svm(X, y, lam: float = 0.01, epochs: int = 200, seed: int = 0):
    """Minimize ``lam/2 |w|^2 + mean hinge`` on standardized features.

    Pegasos-style updates with step ``1 / (lam * t)``, cycling through the
    samples in one seeded order every epoch, followed by projection onto the
    ball of radius ``1/sqrt(lam)``. The bias is learned as the weight of a
    constant input column, so it is regularized like the other weights.
    Returns the final iterate ``(w, b)``; ``w`` is expressed in standardized
    units, which is what makes ``|w|`` comparable across features.
    """
    Z = standardize(X)
    yy = _pm1(y)
    n, m = Z.shape
    if lam <= 0 or epochs < 1:
        raise ValidationError("need lam > 0 and epochs >= 1")
    Za = np.hstack([Z, np.ones((n, 1))])
    order = np.random.default_rng(seed).permutation(n)
    w = np.zeros(m + 1)
    radius = 1.0 / np.sqrt(lam)
    t = 0
    for _ in range(epochs):
        for i in order:
            t += 1
            eta = 1.0 / (lam * t)
            margin = yy[i] * (w @ Za[i])
            w *= 1.0 - eta * lam
            if margin < 1.0:
                w += (eta * yy[i]) * Za[i]
            norm = np.sqrt(w @ w)
            if norm > radius:
                w *= radius / norm
    return w[:m].copy(), float(w[m])


def rfe_svm(X, y, target: int = 9, seed: int = 0, lam: float = 0.01, epochs: int = 200,
            feature_names=None) -> SelectionReport:
    """Backward elimination, one feature per round, by smallest |w|.

    ``scores[k]`` is the round in which column k was removed (1-based);
    survivors get ``m - target + 1``. Ties in |w| remove the higher index.
    """
    X = np.asarray(getattr(X, "values", X), dtype=float)
    m = X.shape[1]
    if not 1 <= target <= m:
        raise ValidationError(f"target={target} must lie in [1, {m}]")
    _pm1(y)
    alive = list(range(m))
    scores = np.zeros(m)
    rnd = 0
    while len(alive) > target:
        rnd += 1
        w, _ = train_linear_svm(X[:, alive], y, lam=lam, epochs=epochs, seed=seed)
        a = np.abs(w)
        worst = min(range(len(alive)), key=lambda k: (a[k], -alive[k]))
        scores[alive[worst]] = rnd
        del alive[worst]
    scores[alive] = m - target + 1
    return SelectionReport("rfe_svm", alive, scores.tolist(),
                           list(feature_names) if feature_names is not None else [])
