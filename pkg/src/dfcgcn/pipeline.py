"""End-to-end orchestration: dFC -> feature selection -> population graph -> GCN -> metrics."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import Cohort, SplitMasks, load_manifest, split_masks
from .dfc import WindowConfig, compute_dfc, upper_pair_names
from .errors import DfcGcnError, ValidationError
from .featsel import (
    FeatureMatrix, SelectionReport, assemble_features, rf_importance, rfe_svm, ttest_fdr_select,
)
from .gcn import TrainConfig, predict, save_params, train, write_history
from .metrics import evaluate, roc_points, save_metrics, write_roc_csv
from .popgraph import (
    PopulationGraph, SimilarityConfig, assemble_graph, build_similarity_graph, save_graph,
    subject_adjacency, write_edge_list,
)

log = logging.getLogger(__name__)

METRIC_KEYS = ("acc", "pre", "rec", "f1", "auc")


@contextmanager
def stage(name: str):
    """Tag package errors raised inside the block with the pipeline stage name."""
    try:
        yield
    except DfcGcnError as exc:
        if getattr(exc, "stage", None) is None:
            exc.stage = name
        raise


@dataclass
class SelectionConfig:
    alpha: float = 0.05
    rf_trees: int = 200
    rf_k: int = 10
    rfe_target: int = 9
    svm_lambda: float = 0.01
    svm_epochs: int = 200
    # "train": selectors see training subjects only; "all": whole cohort
    leakage_mode: str = "train"
    # scalar families are name prefixes before the first "_"; None keeps all
    scalar_families: list[str] | None = None
    # per family, keep this many smallest-p features when FDR rejects fewer
    scalar_min_keep: int = 0
    use_fc: bool = True

    def validate(self):
        if self.leakage_mode not in ("train", "all"):
            raise ValidationError("leakage_mode must be 'train' or 'all'")
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        if self.rf_k < 1 or self.rfe_target < 1 or self.rfe_target > self.rf_k:
            raise ValidationError("need 1 <= rfe_target <= rf_k")


@dataclass
class SplitConfig:
    ratios: list[float] = field(default_factory=lambda: [6, 2, 2])
    seed: int = 0


@dataclass
class PathsConfig:
    cohort: str | None = None
    output_dir: str = "run"


@dataclass
class PipelineConfig:
    window: WindowConfig = field(default_factory=WindowConfig)
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    seeds: list[int] = field(default_factory=lambda: [0])
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self):
        self.window.validate()
        self.similarity.validate()
        self.selection.validate()
        self.train.validate()
        if not self.seeds:
            raise ValidationError("seeds must list at least one seed")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "PipelineConfig":
        d = dict(d or {})
        sections = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(d) - set(sections)
        if unknown:
            raise ValidationError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, value in d.items():
            if name == "seeds":
                kwargs[name] = [int(s) for s in value]
                continue
            sub = sections[name].default_factory()
            for key, v in dict(value).items():
                if not hasattr(sub, key):
                    raise ValidationError(f"unknown key {name}.{key}")
                setattr(sub, key, v)
            kwargs[name] = sub
        return cls(**kwargs).validate()


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    cfg = PipelineConfig.from_dict(doc)
    if cfg.paths.cohort and not Path(cfg.paths.cohort).is_absolute():
        cfg.paths.cohort = str((path.parent / cfg.paths.cohort).resolve())
    return cfg


@dataclass
class CohortDfc:
    fc: FeatureMatrix
    supports: list[np.ndarray]
    window_count: int
    zero_variance: int
    tau: float


def cohort_dfc(cohort: Cohort, window: WindowConfig) -> CohortDfc:
    rows, supports = [], []
    flagged = 0
    K = 0
    tau = 0.0
    for ts in cohort.iter_series():
        res = compute_dfc(ts, window, keep_windows=False)
        rows.append(res.fc_vector)
        supports.append(subject_adjacency(res))
        flagged += res.zero_variance
        K = len(res.ranges)
        tau = res.tau
    fc = FeatureMatrix(np.array(rows), upper_pair_names(cohort.roi_count), cohort.ids)
    return CohortDfc(fc, supports, K, flagged, tau)


def scalar_features(cohort: Cohort) -> FeatureMatrix:
    return FeatureMatrix(cohort.scalar_matrix(), cohort.scalar_names, cohort.ids)


def family_of(name: str) -> str:
    return name.split("_", 1)[0]


def select_features(scalars: FeatureMatrix, fc: FeatureMatrix | None, labels,
                    masks: SplitMasks, sel: SelectionConfig, seed: int = 0):
    """Run the three selectors and assemble the standardized feature matrix.

    Returns ``(X, reports)``; ``reports`` maps a report name to its
    SelectionReport.
    """
    y = np.asarray(labels)
    rows = masks.train if sel.leakage_mode == "train" else np.ones(y.size, dtype=bool)
    reports = {}

    chosen = []
    t_all = np.zeros(scalars.values.shape[1])
    families = sorted({family_of(n) for n in scalars.feature_names})
    if sel.scalar_families is not None:
        families = [f for f in families if f in set(sel.scalar_families)]
    for fam in families:
        cols = [k for k, n in enumerate(scalars.feature_names) if family_of(n) == fam]
        picked, t, _ = ttest_fdr_select(scalars.values[rows][:, cols], y[rows],
                                        alpha=sel.alpha, min_keep=sel.scalar_min_keep)
        t_all[cols] = t
        chosen.extend(cols[k] for k in picked)
    if scalars.values.shape[1]:
        reports["scalar_ttest_fdr"] = SelectionReport(
            "ttest_fdr", sorted(chosen), t_all.tolist(), scalars.feature_names)
    scalar_part = scalars.take(sorted(chosen))

    fc_part = None
    if sel.use_fc and fc is not None and fc.values.shape[1]:
        k = min(sel.rf_k, fc.values.shape[1])
        rf = rf_importance(fc.values[rows], y[rows], k=k, seed=seed, n_trees=sel.rf_trees,
                           feature_names=fc.feature_names)
        reports["fc_rf_top_k"] = rf
        sub = fc.take(rf.selected)
        rfe = rfe_svm(sub.values[rows], y[rows], target=min(sel.rfe_target, k), seed=seed,
                      lam=sel.svm_lambda, epochs=sel.svm_epochs,
                      feature_names=sub.feature_names)
        reports["fc_rfe_svm"] = rfe
        fc_part = fc.take([rf.selected[i] for i in rfe.selected])

    X = assemble_features(scalar_part, fc_part, masks.train)
    if X.values.shape[1] == 0:
        raise ValidationError("feature selection kept no features")
    return X, reports


@dataclass
class SeedResult:
    seed: int
    metrics: dict
    graph: PopulationGraph
    params: object
    history: list
    reports: dict
    probs: np.ndarray


def population_graph(supports, sim: SimilarityConfig):
    S, t_used = build_similarity_graph(supports, sim)
    return S, {"t_used": t_used, "direction": sim.direction, "symmetrize": sim.symmetrize}


def run_seed(cfg: PipelineConfig, seed: int, labels, scalars: FeatureMatrix,
             dfc: CohortDfc, S, graph_meta) -> SeedResult:
    with stage("split"):
        masks = split_masks(labels, cfg.split.ratios, cfg.split.seed + seed)
    with stage("featsel"):
        X, reports = select_features(scalars, dfc.fc, labels, masks, cfg.selection, seed)
    with stage("popgraph"):
        graph = assemble_graph(S, X, labels, masks, graph_meta)
    with stage("gcn"):
        tcfg = dataclasses.replace(cfg.train, seed=seed)
        params, history = train(graph, tcfg)
        pred, probs = predict(graph, params)
    with stage("metrics"):
        metrics = evaluate(graph.labels, pred, probs[:, 1], masks.test)
    return SeedResult(seed, metrics, graph, params, history, reports, probs)


def aggregate(results) -> dict:
    out = {"n_seeds": len(results), "seeds": [r.seed for r in results], "metrics": {}}
    for key in METRIC_KEYS:
        vals = np.array([r.metrics[key] for r in results], dtype=float)
        out["metrics"][key] = {
            "mean": float(np.mean(vals)),
            "sd": float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0,
            "values": vals.tolist(),
        }
    return out


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def input_hashes(cohort: Cohort, manifest_path=None) -> dict:
    hashes = {}
    if manifest_path is not None and Path(manifest_path).is_file():
        hashes["manifest"] = sha256_file(manifest_path)
    for s in cohort.subjects:
        p = cohort.root / s.timeseries_ref
        if p.is_file():
            hashes[s.timeseries_ref] = sha256_file(p)
    return hashes


@dataclass
class RunResult:
    config: PipelineConfig
    results: list[SeedResult]
    aggregate: dict
    dfc: CohortDfc
    S: np.ndarray
    graph_meta: dict


def run_pipeline(cfg: PipelineConfig, cohort: Cohort | None = None, out_dir=None,
                 figures: bool = True) -> RunResult:
    """Execute the whole chain for every seed in ``cfg.seeds``.

    The cohort is read from ``cfg.paths.cohort`` unless passed in. When
    ``out_dir`` is given every artifact is written there (see README for the
    layout).
    """
    with stage("config"):
        cfg.validate()
    manifest_path = None
    with stage("cohort"):
        if cohort is None:
            if not cfg.paths.cohort:
                raise ValidationError("no cohort given: set paths.cohort")
            manifest_path = Path(cfg.paths.cohort)
            cohort = load_manifest(manifest_path)
        labels = cohort.labels
        scalars = scalar_features(cohort)
    with stage("dfc"):
        dfc = cohort_dfc(cohort, cfg.window)
    log.info("dfc: %d subjects, L=%d s=%d K=%d tau=%.4f", len(cohort), cfg.window.L,
             cfg.window.s, dfc.window_count, dfc.tau)
    with stage("popgraph"):
        S, meta = population_graph(dfc.supports, cfg.similarity)
    log.info("graph: t=%.4f, median degree %.1f", meta["t_used"], np.median(S.sum(axis=1)))
    results = []
    for seed in cfg.seeds:
        r = run_seed(cfg, seed, labels, scalars, dfc, S, meta)
        log.info("seed %d: acc=%.3f auc=%.3f", seed, r.metrics["acc"], r.metrics["auc"])
        results.append(r)
    run = RunResult(cfg, results, aggregate(results), dfc, S, meta)
    if out_dir is not None:
        write_run(run, cohort, Path(out_dir), manifest_path, figures)
    return run


def write_dfc_outputs(dfc: CohortDfc, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with (out / "fc_vectors.csv").open("w") as fh:
        for row in dfc.fc.values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    sup = out / "supports"
    sup.mkdir(exist_ok=True)
    for sid, A in zip(dfc.fc.subject_ids, dfc.supports):
        write_edge_list(A, sup / f"{sid}.csv")
    (out / "dfc.json").write_text(json.dumps({
        "subject_ids": dfc.fc.subject_ids,
        "window_count": dfc.window_count,
        "tau_used": dfc.tau,
        "zero_variance_pairs": dfc.zero_variance,
        "n_features": dfc.fc.values.shape[1],
    }, indent=2) + "\n")


def write_seed_outputs(r: SeedResult, cfg: PipelineConfig, out: Path, figures: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, rep in r.reports.items():
        rep.save(out / f"selection_{name}.json")
    save_graph(r.graph, out)
    tcfg = dataclasses.replace(cfg.train, seed=r.seed)
    save_params(r.params, out / "params.json", tcfg)
    write_history(r.history, out / "history.csv")
    save_metrics(r.metrics, out / "metrics.json")
    test = r.graph.masks.test
    if np.unique(r.graph.labels[test]).size == 2:
        pts = roc_points(r.probs[:, 1], r.graph.labels, test)
        write_roc_csv(pts, out / "roc.csv")
    else:
        pts = None
    if figures:
        from .plotting import plot_history, plot_roc
        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        plot_history(r.history, fig_dir / "training_curves.png")
        if pts is not None:
            plot_roc(pts, r.metrics["auc"], fig_dir / "roc.png")


def write_run(run: RunResult, cohort: Cohort, out: Path, manifest_path=None,
              figures: bool = True) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_dfc_outputs(run.dfc, out / "dfc")
    for r in run.results:
        write_seed_outputs(r, run.config, out / f"seed_{r.seed}", figures)
    (out / "aggregate.json").write_text(json.dumps(run.aggregate, indent=2) + "\n")
    if figures:
        from .plotting import plot_metric_summary
        (out / "figures").mkdir(exist_ok=True)
        plot_metric_summary(run.aggregate, out / "figures" / "metric_summary.png")
    manifest = {
        "package_version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config": run.config.to_dict(),
        "inputs": input_hashes(cohort, manifest_path),
        "graph": run.graph_meta,
        "note": "BLAS thread count can change the last bits of matrix products",
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
