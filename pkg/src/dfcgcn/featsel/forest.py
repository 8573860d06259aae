"""Random forest of Gini decision trees with mean-decrease-in-impurity importance."""
from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from .report import SelectionReport, top_k_indices


def _weighted_gini(pos, n):
    # n * gini(node) for a binary node with `pos` positives out of `n`
    return 2.0 * pos * (n - pos) / n


class DecisionTree:
    """Binary classification tree grown to purity (min leaf size 1).

    At every node ``max_features`` candidate columns are drawn without
    replacement; if none of them admits a split the next block of the same
    permutation is tried, so a node only becomes a leaf when it is pure or no
    column varies inside it.
    """

    def __init__(self, max_features: int | None = None):
        self.max_features = max_features
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []
        self.importances_ = None

    def _new_node(self, p):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(p)
        return len(self.feature) - 1

    def _best_split(self, Xn, yn, rng):
        n, m = Xn.shape
        mtry = self.max_features or m
        pos = yn.sum()
        perm = rng.permutation(m)
        nl = np.arange(1, n, dtype=float)[:, None]
        nr = n - nl
        for b in range(0, m, mtry):
            cand = perm[b:b + mtry]
            V = Xn[:, cand]
            order = np.argsort(V, axis=0, kind="stable")
            Vs = np.take_along_axis(V, order, axis=0)
            Ys = yn[order]
            pl = np.cumsum(Ys, axis=0)[:-1]
            pr = pos - pl
            imp = 2.0 * (pl * (nl - pl) / nl + pr * (nr - pr) / nr)
            valid = Vs[1:] > Vs[:-1]
            if not valid.any():
                continue
            imp = np.where(valid, imp, np.inf)
            flat = int(np.argmin(imp.T))
            c, k = divmod(flat, n - 1)
            lo, hi = Vs[k, c], Vs[k + 1, c]
            thr = lo + (hi - lo) / 2.0
            if not lo <= thr < hi:
                thr = lo
            return int(cand[c]), float(thr), float(imp[k, c])
        return None

    def fit(self, X, y, rng=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        rng = rng if rng is not None else np.random.default_rng()
        n, m = X.shape
        imp = np.zeros(m)
        root = self._new_node(y.mean())
        stack = [(root, np.arange(n))]
        while stack:
            node, idx = stack.pop()
            yn = y[idx]
            pos = yn.sum()
            if pos == 0 or pos == idx.size:
                continue
            found = self._best_split(X[idx], yn, rng)
            if found is None:
                continue
            f, thr, child_imp = found
            imp[f] += _weighted_gini(pos, idx.size) - child_imp
            go_left = X[idx, f] <= thr
            li, ri = idx[go_left], idx[~go_left]
            self.feature[node] = f
            self.threshold[node] = thr
            self.left[node] = self._new_node(y[li].mean())
            self.right[node] = self._new_node(y[ri].mean())
            # right pushed first so the left subtree is grown first
            stack.append((self.right[node], ri))
            stack.append((self.left[node], li))
        self.importances_ = imp / n
        return self

    def predict_proba(self, X):
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape[0])
        for r, x in enumerate(X):
            node = 0
            while self.feature[node] >= 0:
                node = self.left[node] if x[self.feature[node]] <= self.threshold[node] else self.right[node]
            out[r] = self.value[node]
        return out


class RandomForest:
    def __init__(self, n_trees: int = 200, max_features: int | str | None = "sqrt", seed: int = 0):
        self.n_trees = n_trees
        self.max_features = max_features
        self.seed = seed
        self.trees: list[DecisionTree] = []
        self.feature_importances_ = None

    def _mtry(self, m: int) -> int:
        if self.max_features == "sqrt":
            return max(1, int(np.sqrt(m)))
        if self.max_features is None:
            return m
        return max(1, min(m, int(self.max_features)))

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y).astype(float)
        n, m = X.shape
        mtry = self._mtry(m)
        seqs = np.random.SeedSequence(self.seed).spawn(self.n_trees)
        self.trees = []
        total = np.zeros(m)
        used = 0
        for ss in seqs:
            rng = np.random.default_rng(ss)
            boot = rng.integers(0, n, size=n)
            tree = DecisionTree(mtry).fit(X[boot], y[boot], rng)
            self.trees.append(tree)
            s = tree.importances_.sum()
            if s > 0:
                total += tree.importances_ / s
                used += 1
        if used and total.sum() > 0:
            self.feature_importances_ = total / total.sum()
        else:
            self.feature_importances_ = np.zeros(m)
        return self

    def predict_proba(self, X):
        return np.mean([t.predict_proba(X) for t in self.trees], axis=0)


def rf_importance(X, y, k: int = 10, seed: int = 0, n_trees: int = 200,
                  feature_names=None) -> SelectionReport:
    """Top-``k`` columns by forest importance (ties broken toward lower index)."""
    X = np.asarray(getattr(X, "values", X), dtype=float)
    y = np.asarray(y).astype(int)
    n, m = X.shape
    if np.unique(y).size < 2:
        raise ValidationError("rf_importance needs both classes present")
    if n < 4:
        raise ValidationError("rf_importance needs at least 4 samples")
    if not 1 <= k <= m:
        raise ValidationError(f"k={k} must lie in [1, {m}]")
    forest = RandomForest(n_trees=n_trees, seed=seed).fit(X, y)
    imp = forest.feature_importances_
    return SelectionReport("rf_top_k", top_k_indices(imp, k).tolist(), imp.tolist(),
                           list(feature_names) if feature_names is not None else [])
