"""Command line entry point.

Every subcommand reads and writes files under ``--out`` so the stages can be
run one at a time or all at once with ``pipeline``. Exit codes: 0 success,
2 invalid input, 3 a solver stopped at its limit (results hold an incumbent).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import pandas as pd

from otpto.core import (
    ValidationError,
    read_orders_csv,
    read_plans_csv,
    simulate_day,
    validate_and_index,
    write_plans_csv,
)
from otpto.datagen import write_dataset
from otpto.features import FeatureMatrix, build_feature_matrix, pm0_forecast
from otpto.labeling import LabelSet, generate_optimal_labels, smooth_labels
from otpto.mlcore import GbdtModel
from otpto.om1 import PROVEN_OPTIMAL, solve_exact
from otpto.om2 import PostprocessConfig, postprocess_all
from otpto.pipeline import (
    ABLATION_GROUPS,
    PipelineConfig,
    PipelineError,
    run_ablation,
    run_pipeline,
    run_robustness,
    run_seeds,
    split_windows,
)
from otpto.predict import PredictionBundle, predict_models, train_models

EXIT_OK, EXIT_INVALID, EXIT_LIMIT = 0, 2, 3
log = logging.getLogger("otpto")


class SolverLimitHit(Exception):
    pass


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_json(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    orders = Path(args.out) / "orders.csv"
    if getattr(args, "orders", None):
        cfg = replace(cfg, dataset=args.orders)
    elif cfg.dataset is None and orders.exists() and args.command not in ("gen", "pipeline", "ablation", "robustness"):
        cfg = replace(cfg, dataset=str(orders))
    return cfg


def _history(cfg: PipelineConfig):
    if not cfg.dataset:
        raise ValidationError("no orders: run `gen` first or pass --orders")
    return validate_and_index(read_orders_csv(cfg.dataset))


def _windows(cfg: PipelineConfig):
    history = _history(cfg)
    train, test = split_windows(history, cfg)
    return history, train, test


def cmd_gen(args, cfg: PipelineConfig) -> int:
    path = write_dataset(cfg.gen, args.out)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_index(args, cfg: PipelineConfig) -> int:
    history = _history(cfg)
    rows = [{"date": d.day.isoformat(), "orders": d.n_orders, "skus": d.n_skus,
             "units": sum(d.demand.values()), "gmv": round(sum(d.gmv_cents) / 100, 2)} for d in history.days]
    out = Path(args.out) / "index.csv"
    pd.DataFrame(rows).to_csv(out, index=False, lineterminator="\n")
    print(f"{len(history.days)} days, {len(history.skus)} SKUs -> {out}")
    return EXIT_OK


def cmd_label(args, cfg: PipelineConfig) -> int:
    history, train, _ = _windows(cfg)
    train_hist = history.between(train[0], train[-1])
    labels = generate_optimal_labels(train_hist, cfg.warehouse, cfg.label_solver)
    labels = smooth_labels(labels, train_hist, cfg.smoothing, cfg.seed)
    labels.to_csv(Path(args.out) / "labels.csv")
    print(f"labels for {len(labels.dates)} days, {len(labels.flagged_days)} flagged")
    if labels.flagged_days:
        raise SolverLimitHit(f"{len(labels.flagged_days)} label days hold incumbents")
    return EXIT_OK


def _load_labels(args) -> LabelSet:
    path = Path(args.out) / "labels.csv"
    if not path.exists():
        raise ValidationError(f"{path} missing: run `label` first")
    return LabelSet.from_csv(path)


def cmd_features(args, cfg: PipelineConfig) -> int:
    history, train, test = _windows(cfg)
    labels = _load_labels(args)
    out = Path(args.out)
    skus = history.between(train[0], train[-1]).skus
    for name, days in (("train", train), ("test", test)):
        m = build_feature_matrix(history, labels, cfg.features, train[0], train[-1], days, skus)
        m.to_csv(out / f"features_{name}.csv", out / "features_manifest.json")
    print(f"features for {len(train)} train and {len(test)} test days")
    return EXIT_OK


def _load_matrix(args, name: str) -> FeatureMatrix:
    out = Path(args.out)
    path = out / f"features_{name}.csv"
    if not path.exists():
        raise ValidationError(f"{path} missing: run `features` first")
    return FeatureMatrix.from_csv(path, out / "features_manifest.json")


def cmd_train(args, cfg: PipelineConfig) -> int:
    matrix = _load_matrix(args, "train")
    labels = _load_labels(args)
    result = train_models(matrix, labels, cfg.pm1, cfg.pm2, cfg.keep_unstocked_in_pm2,
                          cfg.use_smoothed_labels, seed=cfg.seed)
    result.save(Path(args.out) / "models")
    print(json.dumps(result.metrics, sort_keys=True))
    return EXIT_OK


def cmd_plan(args, cfg: PipelineConfig) -> int:
    history, train, test = _windows(cfg)
    out = Path(args.out)
    skus = history.between(train[0], train[-1]).skus
    pm0 = pm0_forecast(history.between(train[0], train[-1]), test, cfg.features.pm0_window,
                       cutoff=train[-1], skus=skus)
    if args.algo == "otpto":
        models = out / "models"
        if not (models / "pm1.json").exists():
            raise ValidationError(f"{models} missing: run `train` first")
        pm1 = GbdtModel.from_json((models / "pm1.json").read_text(encoding="utf-8"))
        pm2 = GbdtModel.from_json((models / "pm2.json").read_text(encoding="utf-8"))
        bundle = predict_models(pm1, pm2, _load_matrix(args, "test"), pm0)
        bundle.to_csv(out / "predictions.csv")
    else:
        frame = pm0[["date", "sku_id", "q_hat"]].assign(y_hat=0.5, x_hat=0.0)
        bundle = PredictionBundle(frame[["date", "sku_id", "y_hat", "x_hat", "q_hat"]])
    plans = postprocess_all(bundle, PostprocessConfig(args.algo, cfg.warehouse))
    write_plans_csv(out / f"plans_{args.algo}.csv", plans)
    print(f"{len(plans)} {args.algo} plans -> {out / f'plans_{args.algo}.csv'}")
    return EXIT_OK


def cmd_eval(args, cfg: PipelineConfig) -> int:
    history, _, test = _windows(cfg)
    out = Path(args.out)
    rows = {d: {"Date": d.isoformat(), "Ord qtty": history.day(d).n_orders} for d in test}
    for algo in ("otpto", "pto"):
        path = out / f"plans_{algo}.csv"
        if path.exists():
            plans = read_plans_csv(path)
            for d in test:
                plan = plans.get(d)
                if plan is not None:
                    rows[d][algo.upper()] = simulate_day(history.day(d), plan).rate
    limited = False
    if not args.no_opt:
        for d in test:
            res = solve_exact(history.day(d), cfg.warehouse, cfg.opt_solver)
            limited |= res.status != PROVEN_OPTIMAL
            rows[d]["OPT"] = res.objective_rate if res.status == PROVEN_OPTIMAL else res.upper_bound
    table = pd.DataFrame(list(rows.values()))
    if "OTPTO" in table and "PTO" in table:
        table["Diff"] = table["OTPTO"] - table["PTO"]
    table.to_csv(out / "eval.csv", index=False, lineterminator="\n", float_format="%.6f")
    print(table.to_string(index=False))
    if limited:
        raise SolverLimitHit("OPT stopped at a limit on some days")
    return EXIT_OK


def cmd_pipeline(args, cfg: PipelineConfig) -> int:
    cfg = replace(cfg, out_dir=args.out)
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",")]
        _, table = run_seeds(cfg, seeds)
        table.to_csv(Path(args.out) / "seeds.csv", index=False, lineterminator="\n", float_format="%.6f")
        print(table.to_string(index=False))
        limited = int(table["label_days_flagged"].sum() + table["opt_days_bound"].sum())
    else:
        report = run_pipeline(cfg)
        print(report.to_markdown())
        limited = report.summary["label_days_flagged"] + report.summary["opt_days_bound"]
    if limited:
        raise SolverLimitHit("some solves stopped at their limit")
    return EXIT_OK


def cmd_ablation(args, cfg: PipelineConfig) -> int:
    groups = [g.strip() for g in args.groups.split(",") if g.strip()] if args.groups else list(ABLATION_GROUPS)
    unknown = [g for g in groups if g not in ABLATION_GROUPS]
    if unknown:
        raise ValidationError(f"unknown ablation groups {unknown}")
    report = run_ablation(replace(cfg, out_dir=args.out), groups)
    print(report.to_markdown())
    return EXIT_OK


def cmd_robustness(args, cfg: PipelineConfig) -> int:
    table = run_robustness(replace(cfg, out_dir=args.out), args.profiles)
    print(table.to_string(index=False))
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen, "index": cmd_index, "label": cmd_label, "features": cmd_features, "train": cmd_train,
    "plan": cmd_plan, "eval": cmd_eval, "pipeline": cmd_pipeline, "ablation": cmd_ablation,
    "robustness": cmd_robustness,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--seed", type=int, help="generator and learner seed")
    common.add_argument("--out", default="out", help="artifact directory (default: out)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="otpto", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate a synthetic orders.csv")
    for name, text in (("index", "validate orders and write per-day statistics"),
                       ("label", "solve historical days and smooth the labels"),
                       ("features", "build train and test feature matrices"),
                       ("train", "fit the selection and quantity learners")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--orders", help="orders CSV (default: <out>/orders.csv)")
    p = sub.add_parser("plan", parents=[common], help="post-process predictions into stock plans")
    p.add_argument("--algo", choices=["otpto", "pto"], required=True)
    p.add_argument("--orders")
    p = sub.add_parser("eval", parents=[common], help="simulate plans on the test days")
    p.add_argument("--orders")
    p.add_argument("--no-opt", action="store_true", help="skip the hindsight optimum")
    p = sub.add_parser("pipeline", parents=[common], help="run every stage end to end")
    p.add_argument("--orders")
    p.add_argument("--seeds", help="comma-separated seeds for a multi-seed run")
    p = sub.add_parser("ablation", parents=[common], help="disable one strategy per group")
    p.add_argument("--groups", help="comma-separated subset of A1..A6 (default: all)")
    p.add_argument("--orders")
    p = sub.add_parser("robustness", parents=[common], help="gap to OPT across generator profiles")
    p.add_argument("--profiles", type=int, default=6)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except SolverLimitHit as exc:
        print(f"solver limit: {exc}", file=sys.stderr)
        return EXIT_LIMIT
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID if isinstance(exc.cause, (ValidationError, ValueError)) else 1
    except (ValidationError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
