"""Subject-level population graph built from binary connectivity supports.

For subjects i and j with binary adjacency matrices ``A_i`` and ``A_j``::

    s_ij = 1 - sum((A_i - A_j)**2) / sum(A_i**2)

which for binary inputs is ``1 - hamming(A_i, A_j) / popcount(A_i)``. The
score is not symmetric, so the thresholded relation is symmetrized before it
becomes the graph ``S``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cohort import LABELS, SplitMasks, encode_labels
from .errors import DegenerateSubject, DimensionMismatch, ValidationError
from .featsel.matrix import FeatureMatrix

DIRECTIONS = ("ge", "lt_paper")
SYMMETRIZE = ("or", "and", "mean_then_threshold")


@dataclass
class SimilarityConfig:
    t: float | None = None
    # used when t is None: pick t so the median node degree is closest to this
    auto_degree: int = 10
    direction: str = "ge"
    symmetrize: str = "or"

    def validate(self):
        if self.direction not in DIRECTIONS:
            raise ValidationError(f"direction must be one of {DIRECTIONS}")
        if self.symmetrize not in SYMMETRIZE:
            raise ValidationError(f"symmetrize must be one of {SYMMETRIZE}")
        if self.t is not None and not np.isfinite(self.t):
            raise ValidationError("similarity threshold t must be finite")
        if self.t is None and self.auto_degree < 0:
            raise ValidationError("auto_degree must be >= 0")


def subject_adjacency(dfc) -> np.ndarray:
    """Subject-level binary adjacency: support of the accumulated dFC matrix."""
    return np.asarray(dfc.support)


def similarity(A_i, A_j) -> float:
    A_i = np.asarray(A_i, dtype=float)
    A_j = np.asarray(A_j, dtype=float)
    if A_i.shape != A_j.shape:
        raise DimensionMismatch(f"adjacency shapes differ: {A_i.shape} vs {A_j.shape}")
    denom = np.sum(np.abs(A_i) ** 2)
    if denom == 0:
        raise DegenerateSubject("reference adjacency is all-zero")
    return float(1.0 - np.sum(np.abs(A_i - A_j) ** 2) / denom)


def similarity_matrix(adjacencies) -> np.ndarray:
    """All ordered-pair scores; row i uses subject i as the reference (denominator)."""
    F = np.array([np.asarray(a, dtype=float).ravel() for a in adjacencies])
    if F.ndim != 2:
        raise DimensionMismatch("adjacency matrices must share one shape")
    sq = np.einsum("ij,ij->i", F, F)
    bad = np.flatnonzero(sq == 0)
    if bad.size:
        raise DegenerateSubject(f"subjects {bad.tolist()} have all-zero adjacency")
    dist = sq[:, None] + sq[None, :] - 2.0 * (F @ F.T)
    # exact for binary inputs; guards tiny negative round-off otherwise
    np.maximum(dist, 0.0, out=dist)
    np.fill_diagonal(dist, 0.0)
    return 1.0 - dist / sq[:, None]


def threshold_similarity(s: np.ndarray, t: float, direction: str = "ge",
                         symmetrize: str = "or") -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if direction not in DIRECTIONS or symmetrize not in SYMMETRIZE:
        raise ValidationError(f"bad direction/symmetrize: {direction}/{symmetrize}")

    def passes(v):
        return v >= t if direction == "ge" else v < t

    if symmetrize == "mean_then_threshold":
        S = passes(0.5 * (s + s.T))
    else:
        D = passes(s)
        S = (D | D.T) if symmetrize == "or" else (D & D.T)
    S = S.astype(np.int8)
    np.fill_diagonal(S, 0)
    return S


def _median_degree(S):
    return float(np.median(S.sum(axis=1)))


def auto_threshold(s: np.ndarray, target_degree: int, direction: str = "ge",
                   symmetrize: str = "or") -> float:
    """Threshold whose graph has median degree closest to ``target_degree``.

    Candidates are the observed off-diagonal scores; ties prefer the
    candidate whose median degree is at least the target.
    """
    n = s.shape[0]
    off = s[~np.eye(n, dtype=bool)]
    cand = np.unique(off)
    if direction == "lt_paper":
        cand = np.append(cand, cand[-1] + 1.0)
    # ge: degree falls as t grows; lt_paper: degree grows with t
    sign = -1.0 if direction == "ge" else 1.0

    def deg(k):
        return _median_degree(threshold_similarity(s, cand[k], direction, symmetrize))

    # find the boundary index where sign * (deg - target) turns nonnegative
    lo, hi = 0, cand.size - 1
    if sign * (deg(hi) - target_degree) < 0:
        return float(cand[hi])
    while lo < hi:
        mid = (lo + hi) // 2
        if sign * (deg(mid) - target_degree) >= 0:
            hi = mid
        else:
            lo = mid + 1
    neighbours = [k for k in (lo - 1, lo, lo + 1) if 0 <= k < cand.size]
    scored = sorted(neighbours, key=lambda k: (abs(deg(k) - target_degree),
                                               0 if deg(k) >= target_degree else 1, k))
    return float(cand[scored[0]])


def build_similarity_graph(adjacencies, cfg: SimilarityConfig | None = None):
    """Binary symmetric subject graph. Returns ``(S, t_used)``."""
    cfg = cfg or SimilarityConfig()
    cfg.validate()
    if len(adjacencies) < 2:
        raise ValidationError("need at least two subjects")
    s = similarity_matrix(adjacencies)
    t = cfg.t if cfg.t is not None else auto_threshold(s, cfg.auto_degree, cfg.direction,
                                                       cfg.symmetrize)
    return threshold_similarity(s, t, cfg.direction, cfg.symmetrize), float(t)


@dataclass
class PopulationGraph:
    S: np.ndarray
    X: FeatureMatrix
    labels: np.ndarray
    masks: SplitMasks
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.S.shape[0]

    def degrees(self) -> np.ndarray:
        return self.S.sum(axis=1)


def assemble_graph(S, X: FeatureMatrix, labels, masks: SplitMasks, meta=None) -> PopulationGraph:
    S = np.asarray(S)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionMismatch(f"S must be square, got {S.shape}")
    n = S.shape[0]
    y = encode_labels(labels)
    if X.values.shape[0] != n or y.size != n or len(masks) != n:
        raise DimensionMismatch(
            f"S has {n} nodes; X has {X.values.shape[0]} rows, {y.size} labels, "
            f"{len(masks)} mask entries")
    if not np.array_equal(S, S.T):
        raise ValidationError("S must be symmetric")
    if np.any(np.diag(S) != 0):
        raise ValidationError("S must have a zero diagonal")
    if not np.isin(S, (0, 1)).all():
        raise ValidationError("S entries must be 0 or 1")
    return PopulationGraph(S.astype(np.int8), X, y, masks, dict(meta or {}))


def edge_list(S) -> list[tuple[int, int]]:
    i, j = np.nonzero(np.triu(S, k=1))
    return list(zip(i.tolist(), j.tolist()))


def write_edge_list(S, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        for i, j in edge_list(S):
            w.writerow([i, j])


def read_edge_list(path, n: int) -> np.ndarray:
    S = np.zeros((n, n), dtype=np.int8)
    with Path(path).open(newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            i, j = int(row[0]), int(row[1])
            S[i, j] = S[j, i] = 1
    return S


def save_graph(graph: PopulationGraph, out_dir, stem: str = "graph") -> Path:
    """Edge list CSV, feature CSV and a JSON sidecar that ties them together."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    edges_file = f"{stem}_edges.csv"
    features_file = f"{stem}_features.csv"
    write_edge_list(graph.S, out / edges_file)
    with (out / features_file).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", *graph.X.feature_names])
        for sid, row in zip(graph.X.subject_ids, graph.X.values):
            w.writerow([sid, *(repr(float(v)) for v in row)])
    side = {
        "n": graph.n,
        "t_used": graph.meta.get("t_used"),
        "direction": graph.meta.get("direction"),
        "symmetrize": graph.meta.get("symmetrize"),
        "degree_histogram": np.bincount(graph.degrees(), minlength=1).tolist(),
        "edges_file": edges_file,
        "features_file": features_file,
        "subject_ids": list(graph.X.subject_ids),
        "labels": [LABELS[k] for k in graph.labels],
        "masks": graph.masks.to_dict(),
    }
    path = out / f"{stem}.json"
    path.write_text(json.dumps(side, indent=2) + "\n")
    return path


def load_graph(path) -> PopulationGraph:
    path = Path(path)
    try:
        side = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read graph sidecar {path}: {exc}") from exc
    n = int(side["n"])
    S = read_edge_list(path.parent / side["edges_file"], n)
    with (path.parent / side["features_file"]).open(newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    ids = [r[0] for r in rows[1:]]
    vals = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(len(ids), len(names))
    X = FeatureMatrix(vals, names, ids)
    masks = SplitMasks.from_dict(side["masks"], n)
    meta = {k: side.get(k) for k in ("t_used", "direction", "symmetrize")}
    return assemble_graph(S, X, side["labels"], masks, meta)
