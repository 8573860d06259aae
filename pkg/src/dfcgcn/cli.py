"""Command-line entry point: ``dfcgcn <subcommand>``.

Exit codes: 0 success, 2 invalid input or configuration, 3 runtime failure
(including training divergence).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .cohort import Cohort, SplitMasks, load_manifest, split_masks
from .errors import NumericalError, ValidationError
from .featsel import FeatureMatrix
from .gcn import load_params, predict, save_params, train, write_history
from .metrics import evaluate, save_metrics
from .pipeline import (
    CohortDfc, PipelineConfig, cohort_dfc, load_config, population_graph, run_pipeline,
    scalar_features, select_features, write_dfc_outputs,
)
from .popgraph import assemble_graph, load_graph, read_edge_list, save_graph
from .synth import generate_cohort, load_spec

log = logging.getLogger("dfcgcn")


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if getattr(args, "cohort", None):
        cfg.paths.cohort = str(Path(args.cohort).resolve())
    if args.out:
        cfg.paths.output_dir = args.out
    if args.seed is not None:
        cfg.seeds = [args.seed]
    return cfg


def _cohort(cfg) -> Cohort:
    if not cfg.paths.cohort:
        raise ValidationError("no cohort manifest: pass --cohort or set paths.cohort")
    return load_manifest(cfg.paths.cohort)


def _read_matrix(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def _load_dfc(cohort: Cohort, out: Path) -> CohortDfc:
    from .dfc import upper_pair_names

    d = out / "dfc"
    if not (d / "fc_vectors.csv").is_file():
        raise ValidationError(f"{d}: run the 'dfc' subcommand first")
    meta = json.loads((d / "dfc.json").read_text())
    if meta["subject_ids"] != cohort.ids:
        raise ValidationError("dfc outputs were computed for a different cohort")
    fc = FeatureMatrix(_read_matrix(d / "fc_vectors.csv"), upper_pair_names(cohort.roi_count),
                       cohort.ids)
    supports = [read_edge_list(d / "supports" / f"{sid}.csv", cohort.roi_count)
                for sid in cohort.ids]
    return CohortDfc(fc, supports, meta["window_count"], meta["zero_variance_pairs"],
                     meta["tau_used"])


def cmd_synth(args) -> int:
    spec = load_spec(args.spec)
    out = Path(args.out or "cohort")
    generate_cohort(spec, out)
    log.info("wrote %d subjects to %s", 2 * spec.n_per_group, out)
    return 0


def cmd_dfc(args) -> int:
    cfg = _config(args)
    cohort = _cohort(cfg)
    dfc = cohort_dfc(cohort, cfg.window)
    out = Path(cfg.paths.output_dir)
    write_dfc_outputs(dfc, out / "dfc")
    log.info("dfc: %d subjects, K=%d windows, tau=%.4f -> %s", len(cohort), dfc.window_count,
             dfc.tau, out / "dfc")
    return 0


def _split(cfg, cohort, seed) -> SplitMasks:
    return split_masks(cohort.labels, cfg.split.ratios, cfg.split.seed + seed)


def cmd_features(args) -> int:
    cfg = _config(args)
    cohort = _cohort(cfg)
    out = Path(cfg.paths.output_dir)
    dfc = _load_dfc(cohort, out)
    for seed in cfg.seeds:
        masks = _split(cfg, cohort, seed)
        X, reports = select_features(scalar_features(cohort), dfc.fc, cohort.labels, masks,
                                     cfg.selection, seed)
        d = out / "features" / f"seed_{seed}"
        d.mkdir(parents=True, exist_ok=True)
        for name, rep in reports.items():
            rep.save(d / f"selection_{name}.json")
        with (d / "features.csv").open("w") as fh:
            fh.write(",".join(["subject_id", *X.feature_names]) + "\n")
            for sid, row in zip(X.subject_ids, X.values):
                fh.write(",".join([sid, *(repr(float(v)) for v in row)]) + "\n")
        (d / "masks.json").write_text(json.dumps(masks.to_dict(), indent=2) + "\n")
        log.info("seed %d: %d features -> %s", seed, X.values.shape[1], d)
    return 0


def _read_features(path) -> FeatureMatrix:
    lines = Path(path).read_text().splitlines()
    names = lines[0].split(",")[1:]
    ids, rows = [], []
    for line in lines[1:]:
        parts = line.split(",")
        ids.append(parts[0])
        rows.append([float(v) for v in parts[1:]])
    return FeatureMatrix(np.array(rows).reshape(len(ids), len(names)), names, ids)


def cmd_graph(args) -> int:
    cfg = _config(args)
    cohort = _cohort(cfg)
    out = Path(cfg.paths.output_dir)
    dfc = _load_dfc(cohort, out)
    S, meta = population_graph(dfc.supports, cfg.similarity)
    for seed in cfg.seeds:
        d = out / "features" / f"seed_{seed}"
        if not (d / "features.csv").is_file():
            raise ValidationError(f"{d}: run the 'features' subcommand first")
        X = _read_features(d / "features.csv")
        masks = SplitMasks.from_dict(json.loads((d / "masks.json").read_text()), len(cohort))
        graph = assemble_graph(S, X, cohort.labels, masks, meta)
        path = save_graph(graph, out / "graph" / f"seed_{seed}")
        log.info("seed %d: graph t=%.4f, %d edges -> %s", seed, meta["t_used"],
                 int(S.sum() // 2), path)
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(cfg.paths.output_dir)
    for seed in cfg.seeds:
        gpath = Path(args.graph) if args.graph else out / "graph" / f"seed_{seed}" / "graph.json"
        graph = load_graph(gpath)
        tcfg = dataclasses.replace(cfg.train, seed=seed)
        params, history = train(graph, tcfg)
        d = out / "model" / f"seed_{seed}"
        d.mkdir(parents=True, exist_ok=True)
        save_params(params, d / "params.json", tcfg)
        write_history(history, d / "history.csv")
        if not args.no_figures:
            from .plotting import plot_history
            plot_history(history, d / "training_curves.png")
        log.info("seed %d: best val acc %.3f -> %s", seed,
                 max((h["val_acc"] for h in history), default=float("nan")), d)
    return 0


def cmd_eval(args) -> int:
    params = load_params(args.model)
    graph = load_graph(args.graph)
    pred, probs = predict(graph, params)
    metrics = evaluate(graph.labels, pred, probs[:, 1], graph.masks.test)
    text = json.dumps(metrics, indent=2)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        save_metrics(metrics, Path(args.out) / "metrics.json")
    print(text)
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    out = Path(cfg.paths.output_dir)
    run = run_pipeline(cfg, out_dir=out, figures=not args.no_figures)
    agg = run.aggregate["metrics"]
    for key in ("acc", "pre", "rec", "f1", "auc"):
        log.info("%s: %.3f +/- %.3f", key.upper(), agg[key]["mean"], agg[key]["sd"])
    log.info("run directory: %s", out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="pipeline config JSON")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="run a single seed instead of the config's seed list")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="dfcgcn", parents=[common],
                                description="dynamic FC + population-graph GCN pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")
    s.add_argument("spec", help="synthetic cohort spec JSON")
    s.set_defaults(func=cmd_synth)

    for name, func, helptext in (
        ("dfc", cmd_dfc, "sliding-window dFC features and supports"),
        ("features", cmd_features, "t-test/FDR, forest and SVM-RFE selection"),
        ("graph", cmd_graph, "population graph per seed"),
        ("train", cmd_train, "train the GCN on a saved graph"),
        ("pipeline", cmd_pipeline, "run every stage for every seed"),
    ):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("--cohort", help="cohort manifest (overrides paths.cohort)")
        sp.set_defaults(func=func)
        if name == "train":
            sp.add_argument("--graph", help="graph sidecar JSON (default: <out>/graph/seed_N)")
        if name in ("train", "pipeline"):
            sp.add_argument("--no-figures", action="store_true")

    e = sub.add_parser("eval", parents=[common], help="evaluate saved parameters on a graph")
    e.add_argument("model", help="params.json")
    e.add_argument("graph", help="graph sidecar JSON")
    e.set_defaults(func=cmd_eval)
    return p


def _where(args, exc) -> str:
    st = getattr(exc, "stage", None)
    return f"{args.command}/{st}" if st else args.command


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for attr, default in (("config", None), ("out", None), ("seed", None), ("quiet", False)):
        if not hasattr(args, attr):
            setattr(args, attr, default)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error [{_where(args, exc)}]: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error [{_where(args, exc)}]: {exc}", file=sys.stderr)
        return 3
    except (OSError, KeyError, ValueError) as exc:
        print(f"error [{args.command}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
