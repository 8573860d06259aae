"""Synthetic two-group cohorts with planted connectivity and scalar effects.

Every planted edge (i, j) gets its own AR(1) latent factor ``f`` with unit
stationary variance. ROI i and ROI j both load on it and receive independent
white observation noise of scale ``noise_sigma``::

    x_i = a * f + sigma * e_i
    x_j = sign(rho) * a * f + sigma * e_j,    a = sigma * sqrt(|rho| / (1 - |rho|))

which makes the population correlation of the pair exactly ``rho``
(``rho_base`` for NC, ``rho_base + delta_corr`` for AD). ROIs outside planted
edges carry noise only, so every other pair has population correlation 0.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cohort import Cohort, Subject, save_manifest, save_timeseries
from .errors import ValidationError


@dataclass
class PlantedScalar:
    name: str
    delta_mean: float = 0.0
    sigma: float = 1.0


@dataclass
class SynthSpec:
    n_per_group: int = 30
    n_rois: int = 20
    T: int = 200
    dt: float = 2.0
    planted_edges: list[tuple[int, int, float]] = field(default_factory=list)
    planted_scalars: list[PlantedScalar] = field(default_factory=list)
    noise_sigma: float = 1.0
    ar_coeff: float = 0.5
    rho_base: float = 0.2
    seed: int = 0

    def __post_init__(self):
        self.planted_edges = [(int(i), int(j), float(d)) for i, j, d in self.planted_edges]
        self.planted_scalars = [
            s if isinstance(s, PlantedScalar) else
            PlantedScalar(*s) if isinstance(s, (list, tuple)) else PlantedScalar(**s)
            for s in self.planted_scalars
        ]
        self.validate()

    def validate(self):
        if self.n_per_group < 1 or self.n_rois < 2 or self.T < 2:
            raise ValidationError("need n_per_group >= 1, n_rois >= 2, T >= 2")
        if not 0 <= self.ar_coeff < 1:
            raise ValidationError(f"ar_coeff must lie in [0, 1), got {self.ar_coeff}")
        if self.noise_sigma <= 0 or self.dt <= 0:
            raise ValidationError("noise_sigma and dt must be positive")
        used = set()
        seen = set()
        for i, j, delta in self.planted_edges:
            if not 0 <= i < j < self.n_rois:
                raise ValidationError(f"planted edge ({i}, {j}) needs 0 <= i < j < n_rois")
            if (i, j) in seen:
                raise ValidationError(f"duplicate planted edge ({i}, {j})")
            seen.add((i, j))
            # a ROI on two latents would change both pair correlations
            if i in used or j in used:
                raise ValidationError(f"planted edge ({i}, {j}) shares a ROI with another edge")
            used.update((i, j))
            for rho in (self.rho_base, self.rho_base + delta):
                if not -1 < rho < 1:
                    raise ValidationError(
                        f"edge ({i}, {j}): correlation {rho} outside (-1, 1)")
        names = [s.name for s in self.planted_scalars]
        if len(set(names)) != len(names):
            raise ValidationError("scalar feature names must be unique")
        for s in self.planted_scalars:
            if s.sigma <= 0:
                raise ValidationError(f"scalar {s.name}: sigma must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        d["planted_edges"] = [tuple(e) for e in d.get("planted_edges", [])]
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["planted_edges"] = [list(e) for e in self.planted_edges]
        return d


@dataclass
class GroundTruth:
    planted_edges: list[tuple[int, int]]
    planted_scalars: list[str]

    def to_dict(self) -> dict:
        return {"planted_edges": [list(e) for e in self.planted_edges],
                "planted_scalars": list(self.planted_scalars)}


def _ar1(rng, T: int, phi: float) -> np.ndarray:
    eta = rng.standard_normal(T)
    f = np.empty(T)
    f[0] = eta[0]
    scale = np.sqrt(1.0 - phi * phi)
    for t in range(1, T):
        f[t] = phi * f[t - 1] + scale * eta[t]
    return f


def simulate_timeseries(spec: SynthSpec, is_ad: bool, rng) -> np.ndarray:
    sigma = spec.noise_sigma
    x = sigma * rng.standard_normal((spec.T, spec.n_rois))
    for i, j, delta in spec.planted_edges:
        rho = spec.rho_base + (delta if is_ad else 0.0)
        f = _ar1(rng, spec.T, spec.ar_coeff)
        a = sigma * np.sqrt(abs(rho) / (1.0 - abs(rho)))
        x[:, i] += a * f
        x[:, j] += np.sign(rho) * a * f
    return x


def subject_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def generate_arrays(spec: SynthSpec):
    """In-memory cohort: (ids, labels, list of T x N arrays, scalar dicts)."""
    ids, labels, series, scalars = [], [], [], []
    n = spec.n_per_group
    for k in range(2 * n):
        is_ad = k < n
        rng = subject_rng(spec.seed, k)
        ids.append(f"sub-{k:04d}")
        labels.append("AD" if is_ad else "NC")
        series.append(simulate_timeseries(spec, is_ad, rng))
        scalars.append({
            s.name: float(rng.normal((s.delta_mean if is_ad else 0.0), s.sigma))
            for s in spec.planted_scalars
        })
    return ids, labels, series, scalars


def generate_cohort(spec: SynthSpec, out_dir=None, window_length: int | None = None):
    """Generate the cohort; when ``out_dir`` is given, write manifest, CSVs and truth JSON.

    Returns ``(cohort, ground_truth)``. The ground truth lists only edges and
    scalars with a nonzero planted effect.
    """
    spec.validate()
    if window_length is not None and spec.T < 2 * window_length:
        warnings.warn(f"T={spec.T} is shorter than two windows of length {window_length}")
    ids, labels, series, scalars = generate_arrays(spec)
    subjects = [Subject(id=i, label=lab, scalar_features=sc, timeseries_ref=f"ts/{i}.csv")
                for i, lab, sc in zip(ids, labels, scalars)]
    root = Path(out_dir) if out_dir is not None else Path(".")
    cohort = Cohort(subjects=subjects, roi_count=spec.n_rois, dt_seconds=spec.dt, root=root,
                    series_cache=dict(zip(ids, series)))
    truth = GroundTruth(
        planted_edges=[(i, j) for i, j, d in spec.planted_edges if d != 0],
        planted_scalars=[s.name for s in spec.planted_scalars if s.delta_mean != 0],
    )
    if out_dir is not None:
        (root / "ts").mkdir(parents=True, exist_ok=True)
        for i, x in zip(ids, series):
            save_timeseries(x, root / "ts" / f"{i}.csv")
        save_manifest(cohort, root / "manifest.json")
        (root / "ground_truth.json").write_text(json.dumps(truth.to_dict(), indent=2) + "\n")
        (root / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    return cohort, truth


def load_spec(path) -> SynthSpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read synth spec {path}: {exc}") from exc
    try:
        return SynthSpec.from_dict(doc)
    except TypeError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
