"""Shared cohort specs, small builders and brute-force oracles for the test suite."""
from fractions import Fraction

import numpy as np

from dfcgcn.synth import PlantedScalar, SynthSpec

PLANTED_EDGES = [(0, 1), (2, 3), (4, 5)]
# filled by the acceptance tests, echoed in the terminal summary
CRITERION_LINES = []


def signal_spec(delta_corr=0.5, delta_mean=1.0, seed=0, **kw):
    """60 subjects, 20 ROIs, T=200; three planted edges and two planted scalars.

    Null scalars pad the families to four ALFF and five ReHo columns.
    """
    scalars = [PlantedScalar("alff_1", delta_mean)]
    scalars += [PlantedScalar(f"alff_{k}") for k in (2, 3, 4)]
    scalars += [PlantedScalar("reho_1", delta_mean)]
    scalars += [PlantedScalar(f"reho_{k}") for k in (2, 3, 4, 5)]
    edges = [(i, j, delta_corr) for i, j in PLANTED_EDGES]
    return SynthSpec(n_per_group=30, n_rois=20, T=200, planted_edges=edges,
                     planted_scalars=scalars, seed=seed, **kw)


def random_graph(rng, n, p=0.3):
    S = (rng.random((n, n)) < p).astype(np.int8)
    S = np.triu(S, 1)
    return S + S.T


def gradient_check_instance(seed, h=1e-5):
    """Max relative error between analytic and central-difference gradients."""
    from dfcgcn.gcn import GcnParams, backward, forward, init_params, loss, normalize_adjacency

    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 11))
    in_dim = int(rng.integers(1, 7))
    hidden = int(rng.integers(2, 9))
    A = normalize_adjacency(random_graph(rng, n))
    X = rng.standard_normal((n, in_dim))
    y = rng.integers(0, 2, n)
    mask = rng.random(n) < 0.7
    mask[0] = True
    wd = float(rng.choice([0.0, 5e-4, 0.1]))
    params = init_params(in_dim, hidden, seed=seed)
    params = GcnParams(params.W0 * 2, params.W1 * 2)

    def f(p):
        c = forward(X, A, p)
        return loss(c.probs, y, mask, p, wd, c.logits)

    analytic = backward(forward(X, A, params), y, mask, params, wd)
    worst = 0.0
    for k in (0, 1):
        W = (params.W0, params.W1)[k]
        for idx in np.ndindex(W.shape):
            plus = [params.W0.copy(), params.W1.copy()]
            minus = [params.W0.copy(), params.W1.copy()]
            plus[k][idx] += h
            minus[k][idx] -= h
            fd = (f(GcnParams(*plus)) - f(GcnParams(*minus))) / (2 * h)
            err = abs(analytic[k][idx] - fd) / (abs(fd) + 1e-8)
            worst = max(worst, err)
    return worst


def equivariance_instance(seed):
    """True when forward on a relabeled graph is exactly the relabeled forward."""
    from dfcgcn.gcn import forward, init_params, normalize_adjacency

    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 40))
    in_dim = int(rng.integers(1, 10))
    S = random_graph(rng, n, p=float(rng.uniform(0.05, 0.6)))
    X = rng.standard_normal((n, in_dim))
    params = init_params(in_dim, 16, seed=seed)
    perm = rng.permutation(n)
    base = forward(X, normalize_adjacency(S), params)
    moved = forward(X[perm], normalize_adjacency(S[np.ix_(perm, perm)]), params)
    return (np.array_equal(base.logits[perm], moved.logits)
            and np.array_equal(base.probs[perm], moved.probs))


def brute_windows(T, L, s):
    starts = []
    k = 0
    while True:
        start = k * s
        if start + L >= T:
            starts.append(T - L)
            break
        starts.append(start)
        k += 1
    return [(a, a + L) for a in starts]


def brute_bh(p, alpha):
    m = len(p)
    best = 0
    for k in range(1, m + 1):
        if sorted(p)[k - 1] <= alpha * k / m:
            best = k
    if best == 0:
        return np.zeros(m, dtype=bool)
    cut = sorted(p)[best - 1]
    return np.array([v <= cut for v in p])


def brute_auc(scores, y):
    pos = [s for s, t in zip(scores, y) if t == 1]
    neg = [s for s, t in zip(scores, y) if t == 0]
    wins = sum(Fraction(1) if p > n else Fraction(1, 2) if p == n else Fraction(0)
               for p in pos for n in neg)
    return wins / (len(pos) * len(neg))
