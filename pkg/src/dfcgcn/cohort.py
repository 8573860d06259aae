"""Cohort data model: manifest and time-series I/O plus stratified splits."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateId,
    InconsistentScalars,
    InfeasibleSplit,
    NonFiniteInput,
    UnknownLabel,
    ValidationError,
)

LABELS = ("NC", "AD")
# integer coding used everywhere downstream; AD is the positive class
NC, AD = 0, 1


def encode_labels(labels) -> np.ndarray:
    out = []
    for lab in labels:
        if isinstance(lab, (int, np.integer)) and lab in (NC, AD):
            out.append(int(lab))
        elif lab in LABELS:
            out.append(LABELS.index(lab))
        else:
            raise UnknownLabel(f"unknown label {lab!r}; expected 'AD' or 'NC'")
    return np.asarray(out, dtype=int)


@dataclass
class Subject:
    id: str
    label: str
    scalar_features: dict[str, float]
    timeseries_ref: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise UnknownLabel(f"subject {self.id}: unknown label {self.label!r}")


@dataclass
class RoiTimeSeries:
    subject_id: str
    data: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise ValidationError(f"{self.subject_id}: time series must be 2-D (T x N)")
        T, N = self.data.shape
        if T < 2 or N < 2:
            raise ValidationError(f"{self.subject_id}: need T >= 2 and N >= 2, got {T}x{N}")
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteInput(f"{self.subject_id}: time series contains NaN or Inf")

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def N(self) -> int:
        return self.data.shape[1]


@dataclass
class SplitMasks:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=bool)
        self.val = np.asarray(self.val, dtype=bool)
        self.test = np.asarray(self.test, dtype=bool)
        total = self.train.astype(int) + self.val.astype(int) + self.test.astype(int)
        if not (self.train.shape == self.val.shape == self.test.shape):
            raise ValidationError("split masks must have equal length")
        if np.any(total != 1):
            raise ValidationError("every subject must belong to exactly one split")

    def __len__(self):
        return self.train.size

    def sizes(self) -> tuple[int, int, int]:
        return int(self.train.sum()), int(self.val.sum()), int(self.test.sum())

    def to_dict(self) -> dict:
        return {name: np.flatnonzero(getattr(self, name)).tolist()
                for name in ("train", "val", "test")}

    @classmethod
    def from_dict(cls, d: dict, n: int) -> "SplitMasks":
        masks = {}
        for name in ("train", "val", "test"):
            m = np.zeros(n, dtype=bool)
            m[np.asarray(d[name], dtype=int)] = True
            masks[name] = m
        return cls(**masks)


@dataclass
class Cohort:
    subjects: list[Subject]
    roi_count: int
    dt_seconds: float
    root: Path = field(default_factory=Path)
    # in-memory series keyed by subject id; bypasses the CSV files when set
    series_cache: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        seen = set()
        for s in self.subjects:
            if s.id in seen:
                raise DuplicateId(f"duplicate subject id {s.id!r}")
            seen.add(s.id)
        if self.subjects:
            keys = sorted(self.subjects[0].scalar_features)
            for s in self.subjects[1:]:
                if sorted(s.scalar_features) != keys:
                    raise InconsistentScalars(
                        f"subject {s.id!r} scalar features {sorted(s.scalar_features)} "
                        f"differ from {keys}")
        # canonical order: sorted by feature name
        for s in self.subjects:
            s.scalar_features = {k: float(s.scalar_features[k]) for k in sorted(s.scalar_features)}

    def __len__(self):
        return len(self.subjects)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.subjects]

    @property
    def labels(self) -> np.ndarray:
        return encode_labels([s.label for s in self.subjects])

    @property
    def scalar_names(self) -> list[str]:
        return list(self.subjects[0].scalar_features) if self.subjects else []

    def scalar_matrix(self) -> np.ndarray:
        names = self.scalar_names
        return np.array([[s.scalar_features[k] for k in names] for s in self.subjects],
                        dtype=float).reshape(len(self.subjects), len(names))

    def load_series(self, subject: Subject) -> RoiTimeSeries:
        if self.series_cache is not None and subject.id in self.series_cache:
            return RoiTimeSeries(subject.id, self.series_cache[subject.id], self.dt_seconds)
        ts = load_timeseries(self.root / subject.timeseries_ref, subject_id=subject.id,
                             dt=self.dt_seconds)
        if ts.N != self.roi_count:
            raise ValidationError(
                f"{subject.id}: {ts.N} ROI columns, manifest says {self.roi_count}")
        return ts

    def iter_series(self):
        for s in self.subjects:
            yield self.load_series(s)


def load_manifest(path) -> Cohort:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    try:
        subjects = [
            Subject(id=str(s["id"]), label=s["label"],
                    scalar_features=dict(s.get("scalars", {})),
                    timeseries_ref=s["timeseries"])
            for s in doc["subjects"]
        ]
        return Cohort(subjects=subjects, roi_count=int(doc["roi_count"]),
                      dt_seconds=float(doc["dt_seconds"]), root=path.parent)
    except KeyError as exc:
        raise ValidationError(f"{path}: missing manifest key {exc}") from exc


def save_manifest(cohort: Cohort, path) -> None:
    doc = {
        "roi_count": cohort.roi_count,
        "dt_seconds": cohort.dt_seconds,
        "subjects": [
            {"id": s.id, "label": s.label, "timeseries": s.timeseries_ref,
             "scalars": {k: s.scalar_features[k] for k in sorted(s.scalar_features)}}
            for s in cohort.subjects
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_timeseries(path, subject_id: str | None = None, dt: float = 1.0) -> RoiTimeSeries:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"time series file not found: {path}")
    rows = []
    width = None
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ValidationError(f"{path}:{lineno}: ragged row ({len(row)} vs {width} columns)")
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: non-numeric cell ({exc})") from exc
            if not all(math.isfinite(v) for v in vals):
                raise NonFiniteInput(f"{path}:{lineno}: NaN or Inf value")
            rows.append(vals)
    if len(rows) < 2:
        raise ValidationError(f"{path}: need at least 2 time points, got {len(rows)}")
    return RoiTimeSeries(subject_id or path.stem, np.array(rows), dt)


def save_timeseries(data: np.ndarray, path) -> None:
    # repr round-trips doubles exactly
    with Path(path).open("w") as fh:
        for row in np.asarray(data, dtype=float):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _largest_remainder(n: int, ratios: np.ndarray) -> np.ndarray:
    quota = n * ratios / ratios.sum()
    counts = np.floor(quota).astype(int)
    short = n - counts.sum()
    # ties go to the earlier split (train, then val, then test)
    order = sorted(range(len(ratios)), key=lambda k: (-(quota[k] - counts[k]), k))
    for k in order[:short]:
        counts[k] += 1
    return counts


def split_masks(labels, ratios=(6, 2, 2), seed: int = 0) -> SplitMasks:
    """Stratified train/val/test split.

    Each label is split on its own with largest-remainder rounding of the
    ratios, so per-label split sizes are the integer partition closest to
    the requested proportions. A split that rounds to zero members of a label
    borrows one from the largest split of that label. Membership within a
    label is a seeded permutation, so the result depends only on the
    arguments.
    """
    y = encode_labels(labels)
    r = np.asarray(ratios, dtype=float)
    if r.shape != (3,) or np.any(r <= 0) or not np.all(np.isfinite(r)):
        raise InfeasibleSplit(f"ratios must be three positive numbers, got {ratios}")
    n = y.size
    if n < 3:
        raise InfeasibleSplit("need at least 3 subjects")
    rng = np.random.default_rng(seed)
    assign = np.full(n, -1)
    for lab in (NC, AD):
        idx = np.flatnonzero(y == lab)
        if idx.size < 3:
            raise InfeasibleSplit(
                f"label {LABELS[lab]} has {idx.size} subjects; stratification needs >= 3")
        counts = _largest_remainder(idx.size, r)
        while np.any(counts == 0):
            counts[np.argmax(counts)] -= 1
            counts[np.flatnonzero(counts == 0)[0]] += 1
        perm = idx[rng.permutation(idx.size)]
        bounds = np.cumsum(counts)
        assign[perm[:bounds[0]]] = 0
        assign[perm[bounds[0]:bounds[1]]] = 1
        assign[perm[bounds[1]:]] = 2
    return SplitMasks(train=assign == 0, val=assign == 1, test=assign == 2)
