"""End-to-end runs: labels, features, learners, post-processing and evaluation.

A run splits the order history into a training window and the final ``T``
test days, trains once on the window and plans every test day from that
snapshot. Each test day is scored for OTPTO, the PTO baseline and OPT, the
hindsight optimum of the same constrained problem on the realized orders.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from otpto.core import (
    IndexedHistory,
    StockPlan,
    ValidationError,
    WarehouseConfig,
    read_orders_csv,
    simulate_day,
    validate_and_index,
    write_orders_csv,
    write_plans_csv,
)
from otpto.datagen import GenParams, generate_synthetic
from otpto.features import FeatureConfig, FeatureMatrix, build_feature_matrix, pm0_forecast
from otpto.labeling import LabelSet, SmoothingConfig, generate_optimal_labels, smooth_labels
from otpto.mlcore import GbdtParams
from otpto.om1 import PROVEN_OPTIMAL, RATE_ONLY, RATE_PLUS_GMV, SolverConfig, solve_exact
from otpto.om2 import OTPTO, PTO, PostprocessConfig, postprocess_all
from otpto.predict import PM1_PARAMS, PM2_PARAMS, PredictionBundle, TrainResult, predict_models, train_models

log = logging.getLogger(__name__)

ABLATION_GROUPS = {
    "A1": "sample strategy (PM2 keeps x_star = 0 rows)",
    "A2": "label strategy (raw y_star as PM1 target)",
    "A3": "decision-making features",
    "A4": "sales prediction features",
    "A5": "clustering features",
    "A6": "SKU-order cross features",
}
_ABLATION_FAMILY = {"A3": "decision", "A4": "sales_pred", "A5": "clustering", "A6": "cross"}
REPORT_COLUMNS = ["Date", "Ord qtty", "OTPTO", "PTO", "OPT", "Diff", "OPT status"]


class PipelineError(RuntimeError):
    """A stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineConfig:
    gen: GenParams = field(default_factory=GenParams)
    dataset: str | None = None
    warehouse: WarehouseConfig = field(default_factory=lambda: WarehouseConfig(K=40, N=900, B=5, T=7))
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    pm1: GbdtParams = PM1_PARAMS
    pm2: GbdtParams = PM2_PARAMS
    # node limits, unlike wall-clock limits, keep incumbents reproducible across machines
    label_solver: SolverConfig = field(
        default_factory=lambda: SolverConfig(objective_mode=RATE_PLUS_GMV, node_limit=1500))
    opt_solver: SolverConfig = field(
        default_factory=lambda: SolverConfig(objective_mode=RATE_ONLY, node_limit=3000))
    train_days: int | None = 90
    train_start: date | None = None
    train_end: date | None = None
    seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    out_dir: str | None = None
    keep_unstocked_in_pm2: bool = False
    use_smoothed_labels: bool = True

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, seed=seed, gen=replace(self.gen, seed=seed))

    def to_dict(self) -> dict:
        d = {
            "gen": json.loads(self.gen.to_json()),
            "dataset": self.dataset,
            "warehouse": asdict(self.warehouse),
            "smoothing": asdict(self.smoothing),
            "features": {**asdict(self.features), "enabled_families": sorted(self.features.enabled_families)},
            "pm1": asdict(self.pm1),
            "pm2": asdict(self.pm2),
            "label_solver": asdict(self.label_solver),
            "opt_solver": asdict(self.opt_solver),
            "train_days": self.train_days,
            "train_start": self.train_start.isoformat() if self.train_start else None,
            "train_end": self.train_end.isoformat() if self.train_end else None,
            "seed": self.seed,
            "seeds": list(self.seeds),
            "out_dir": self.out_dir,
            "keep_unstocked_in_pm2": self.keep_unstocked_in_pm2,
            "use_smoothed_labels": self.use_smoothed_labels,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        base = cls()
        kw = {}
        if "gen" in d:
            kw["gen"] = GenParams.from_dict({**json.loads(base.gen.to_json()), **d["gen"]})
        if "warehouse" in d:
            kw["warehouse"] = WarehouseConfig(**{**asdict(base.warehouse), **d["warehouse"]})
        if "smoothing" in d:
            kw["smoothing"] = SmoothingConfig(**{**asdict(base.smoothing), **d["smoothing"]})
        if "features" in d:
            f = {**asdict(base.features), **d["features"]}
            f["enabled_families"] = frozenset(f["enabled_families"])
            kw["features"] = FeatureConfig(**f)
        for key, default in (("pm1", base.pm1), ("pm2", base.pm2)):
            if key in d:
                kw[key] = GbdtParams(**{**asdict(default), **d[key]})
        for key, default in (("label_solver", base.label_solver), ("opt_solver", base.opt_solver)):
            if key in d:
                kw[key] = SolverConfig(**{**asdict(default), **d[key]})
        for key in ("train_start", "train_end"):
            if d.get(key):
                kw[key] = date.fromisoformat(d[key])
        for key in ("dataset", "train_days", "seed", "out_dir", "keep_unstocked_in_pm2", "use_smoothed_labels"):
            if key in d:
                kw[key] = d[key]
        if "seeds" in d:
            kw["seeds"] = tuple(d["seeds"])
        cfg = cls(**kw)
        if "seed" in d and "gen" not in d:
            cfg = cfg.with_seed(d["seed"])
        return cfg

    @classmethod
    def from_json(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class PipelineReport:
    """Per test day rates plus an averages row; one column per ablation group when requested."""

    table: pd.DataFrame
    inventory: pd.DataFrame
    summary: dict
    ablation: pd.DataFrame | None = None

    def to_csv(self, path: str | Path) -> None:
        _fmt_frame(self.table).to_csv(path, index=False, lineterminator="\n")

    def to_markdown(self) -> str:
        parts = ["## Fulfillment rates", "", _markdown(_fmt_frame(self.table)), ""]
        if self.ablation is not None:
            parts += ["## Ablation", "", _markdown(_fmt_frame(self.ablation)), ""]
        if len(self.inventory):
            parts += ["## Inventory", "", _markdown(_fmt_frame(self.inventory)), ""]
        parts += ["## Summary", "", _markdown(pd.DataFrame(
            {"metric": list(self.summary), "value": [_fmt_value(v) for v in self.summary.values()]})), ""]
        return "\n".join(parts)

    def write(self, out_dir: str | Path, stem: str = "report") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.to_csv(out / f"{stem}.csv")
        _fmt_frame(self.inventory).to_csv(out / f"{stem}_inventory.csv", index=False, lineterminator="\n")
        if self.ablation is not None:
            _fmt_frame(self.ablation).to_csv(out / f"{stem}_ablation.csv", index=False, lineterminator="\n")
        (out / f"{stem}.md").write_text(self.to_markdown(), encoding="utf-8")
        (out / f"{stem}_summary.json").write_text(
            json.dumps({k: _json_value(v) for k, v in self.summary.items()}, indent=2, sort_keys=True) + "\n",
            encoding="utf-8")


def _fmt_value(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    if isinstance(v, date):
        return v.isoformat()
    return str(v)


def _json_value(v):
    if isinstance(v, (np.floating, float)):
        return round(float(v), 10)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, date):
        return v.isoformat()
    return v


def _fmt_frame(df: pd.DataFrame) -> pd.DataFrame:
    return df.apply(lambda col: col.map(_fmt_value))


def _markdown(df: pd.DataFrame) -> str:
    cols = [str(c) for c in df.columns]
    lines = ["| " + " | ".join(cols) + " |", "|" + "|".join("---" for _ in cols) + "|"]
    for row in df.itertuples(index=False):
        lines.append("| " + " | ".join(str(v) for v in row) + " |")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:  # noqa: BLE001 - tag and re-raise
        raise PipelineError(name, exc) from exc


def load_history(cfg: PipelineConfig) -> IndexedHistory:
    lines = read_orders_csv(cfg.dataset) if cfg.dataset else generate_synthetic(cfg.gen)
    return validate_and_index(lines)


def split_windows(history: IndexedHistory, cfg: PipelineConfig) -> tuple[list[date], list[date]]:
    """Training days and the final ``T`` test days."""
    dates = history.dates
    T = cfg.warehouse.T
    if cfg.train_end is not None:
        train = [d for d in dates if d <= cfg.train_end and (cfg.train_start is None or d >= cfg.train_start)]
        test = [d for d in dates if d > cfg.train_end][:T]
    else:
        test = dates[-T:]
        train = [d for d in dates if d < test[0]] if test else []
        if cfg.train_start is not None:
            train = [d for d in train if d >= cfg.train_start]
    if cfg.train_days is not None and cfg.train_start is None:
        train = train[-cfg.train_days:]
    if len(test) < T or not train:
        raise ValidationError(f"need at least one training day and {T} test days, history has {len(dates)} days")
    if train[-1] >= test[0]:
        raise ValidationError("train window must precede the test window")
    return train, test


@dataclass
class _Context:
    """Stage outputs shared by the main run and ablation variants."""

    cfg: PipelineConfig
    history: IndexedHistory
    train_days: list[date]
    test_days: list[date]
    skus: list[str]
    labels: LabelSet
    pm0_test: pd.DataFrame
    opt: dict
    timings: dict


def prepare(cfg: PipelineConfig) -> _Context:
    """Everything that does not depend on the feature/learner variant: data, labels, PM0, OPT."""
    timings = {}
    t0 = time.perf_counter()
    history = _stage("load", load_history, cfg)
    train_days, test_days = _stage("split", split_windows, history, cfg)
    train_hist = history.between(train_days[0], train_days[-1])
    skus = train_hist.skus
    timings["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    raw = _stage("label", generate_optimal_labels, train_hist, cfg.warehouse, cfg.label_solver)
    labels = _stage("smooth", smooth_labels, raw, train_hist, cfg.smoothing, cfg.seed)
    timings["label"] = time.perf_counter() - t0

    pm0_test = _stage("pm0", pm0_forecast, train_hist, test_days, cfg.features.pm0_window,
                      cutoff=train_days[-1], skus=skus)

    t0 = time.perf_counter()
    opt = {}
    for d in test_days:
        out = _stage("opt", solve_exact, history.day(d), cfg.warehouse, cfg.opt_solver)
        opt[d] = out
    timings["opt"] = time.perf_counter() - t0
    return _Context(cfg, history, train_days, test_days, skus, labels, pm0_test, opt, timings)


@dataclass
class _Variant:
    features: FeatureConfig
    keep_unstocked_in_pm2: bool
    use_smoothed_labels: bool


def _plans_for(ctx: _Context, variant: _Variant):
    cfg = ctx.cfg
    train_start, train_end = ctx.train_days[0], ctx.train_days[-1]
    train_m = _stage("features", build_feature_matrix, ctx.history, ctx.labels, variant.features,
                     train_start, train_end, ctx.train_days, ctx.skus)
    test_m = _stage("features", build_feature_matrix, ctx.history, ctx.labels, variant.features,
                    train_start, train_end, ctx.test_days, ctx.skus)
    trained = _stage("train", train_models, train_m, ctx.labels, cfg.pm1, cfg.pm2,
                     keep_unstocked_in_pm2=variant.keep_unstocked_in_pm2,
                     use_smoothed=variant.use_smoothed_labels, seed=cfg.seed)
    bundle = _stage("predict", predict_models, trained.pm1, trained.pm2, test_m, ctx.pm0_test)
    otpto = _stage("om2", postprocess_all, bundle, PostprocessConfig(OTPTO, cfg.warehouse))
    return train_m, test_m, trained, bundle, otpto


def _rates(ctx: _Context, plans: Sequence[StockPlan]) -> dict[date, float]:
    out = {}
    for plan in plans:
        out[plan.day] = simulate_day(ctx.history.day(plan.day), plan).rate
    return out


def _inventory_rows(plans: dict[str, Sequence[StockPlan]]) -> pd.DataFrame:
    rows = []
    for algo, ps in plans.items():
        for p in ps:
            s = p.summary()
            rows.append({"Date": p.day, "Algo": algo, "SKUs": s["n_skus"], "Total": s["total"],
                         "Min": s["min"], "Max": s["max"], "Mean": s["mean"], "Median": s["median"]})
    return pd.DataFrame(rows, columns=["Date", "Algo", "SKUs", "Total", "Min", "Max", "Mean", "Median"])


def _variant(cfg: PipelineConfig) -> _Variant:
    return _Variant(cfg.features, cfg.keep_unstocked_in_pm2, cfg.use_smoothed_labels)


def run_pipeline(cfg: PipelineConfig, ctx: _Context | None = None) -> PipelineReport:
    """One seed, one dataset: OTPTO, PTO and OPT per test day."""
    ctx = ctx or prepare(cfg)
    t0 = time.perf_counter()
    train_m, test_m, trained, bundle, otpto_plans = _plans_for(ctx, _variant(cfg))
    pto_plans = _stage("om2", postprocess_all, bundle, PostprocessConfig(PTO, cfg.warehouse))
    ctx.timings["models"] = time.perf_counter() - t0

    r_otpto = _rates(ctx, otpto_plans)
    r_pto = _rates(ctx, pto_plans)
    rows = []
    for d in ctx.test_days:
        out = ctx.opt[d]
        proven = out.status == PROVEN_OPTIMAL
        rows.append({
            "Date": d, "Ord qtty": ctx.history.day(d).n_orders,
            "OTPTO": r_otpto[d], "PTO": r_pto[d],
            # a timed-out OPT is reported by its bound, never as an achieved rate
            "OPT": out.objective_rate if proven else out.upper_bound,
            "Diff": r_otpto[d] - r_pto[d],
            "OPT status": "optimal" if proven else "bound",
        })
    table = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    avg = {"Date": "Avg", "Ord qtty": float(table["Ord qtty"].mean())}
    for c in ("OTPTO", "PTO", "OPT"):
        avg[c] = float(table[c].mean())
    avg["Diff"] = avg["OTPTO"] - avg["PTO"]
    avg["OPT status"] = "optimal" if (table["OPT status"] == "optimal").all() else "bound"
    table = pd.concat([table, pd.DataFrame([avg])], ignore_index=True)

    orders = table["Ord qtty"][:-1].to_numpy(dtype=float)
    summary = {
        "seed": cfg.seed,
        "train_start": ctx.train_days[0], "train_end": ctx.train_days[-1],
        "test_start": ctx.test_days[0], "test_end": ctx.test_days[-1],
        "otpto_avg": avg["OTPTO"], "pto_avg": avg["PTO"], "opt_avg": avg["OPT"],
        "diff_avg": avg["Diff"],
        "otpto_order_weighted": float(np.dot(table["OTPTO"][:-1], orders) / orders.sum()),
        "pto_order_weighted": float(np.dot(table["PTO"][:-1], orders) / orders.sum()),
        "gap_otpto": avg["OPT"] - avg["OTPTO"], "gap_pto": avg["OPT"] - avg["PTO"],
        "label_days_flagged": len(ctx.labels.flagged_days),
        "opt_days_bound": int((table["OPT status"][:-1] == "bound").sum()),
        "pm1_best_iteration": trained.metrics["pm1_best_iteration"],
        "pm2_best_iteration": trained.metrics["pm2_best_iteration"],
    }
    report = PipelineReport(table, _inventory_rows({OTPTO: otpto_plans, PTO: pto_plans}), summary)

    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if not cfg.dataset:
            write_orders_csv(out / "orders.csv", ctx.history.to_order_lines())
        ctx.labels.to_csv(out / "labels.csv")
        train_m.to_csv(out / "features_train.csv", out / "features_manifest.json")
        test_m.to_csv(out / "features_test.csv")
        trained.save(out / "models")
        bundle.to_csv(out / "predictions.csv")
        write_plans_csv(out / "plans_otpto.csv", otpto_plans)
        write_plans_csv(out / "plans_pto.csv", pto_plans)
        write_plans_csv(out / "plans_opt.csv", [ctx.opt[d].plan for d in ctx.test_days])
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
        report.write(out)
    return report


def run_seeds(cfg: PipelineConfig, seeds: Sequence[int] | None = None) -> tuple[list[PipelineReport], pd.DataFrame]:
    """Run the pipeline for several generator seeds; returns reports and a per-seed summary table."""
    reports = []
    for s in seeds if seeds is not None else cfg.seeds:
        sub = cfg.with_seed(s)
        if cfg.out_dir:
            sub = replace(sub, out_dir=str(Path(cfg.out_dir) / f"seed_{s}"))
        reports.append(run_pipeline(sub))
    rows = [{k: r.summary[k] for k in ("seed", "otpto_avg", "pto_avg", "opt_avg", "diff_avg", "gap_otpto",
                                        "gap_pto", "label_days_flagged", "opt_days_bound")} for r in reports]
    return reports, pd.DataFrame(rows)


def run_ablation(cfg: PipelineConfig, groups: Sequence[str]) -> PipelineReport:
    """Re-run the learners with one strategy disabled per group (labels and OPT are shared)."""
    unknown = [g for g in groups if g not in ABLATION_GROUPS]
    if unknown:
        raise ValueError(f"unknown ablation groups {unknown}; choose from {sorted(ABLATION_GROUPS)}")
    ctx = prepare(cfg)
    base = run_pipeline(replace(cfg, out_dir=None), ctx)
    days = ctx.test_days
    table = pd.DataFrame({"Date": days, "OTPTO": base.table["OTPTO"][:-1].to_numpy()})
    for g in groups:
        v = _variant(cfg)
        if g == "A1":
            v.keep_unstocked_in_pm2 = True
        elif g == "A2":
            v.use_smoothed_labels = False
        else:
            v.features = v.features.without(_ABLATION_FAMILY[g])
        _, _, _, _, plans = _plans_for(ctx, v)
        rates = _rates(ctx, plans)
        table[g] = [rates[d] for d in days]
    avg = {c: float(table[c].mean()) for c in table.columns if c != "Date"}
    diff = {c: avg[c] - avg["OTPTO"] for c in avg}
    table = pd.concat([table, pd.DataFrame([{"Date": "Avg", **avg}, {"Date": "Diff", **diff}])],
                      ignore_index=True)
    report = PipelineReport(base.table, base.inventory, base.summary, ablation=table)
    if cfg.out_dir:
        report.write(cfg.out_dir, stem="ablation")
    return report


def robustness_profiles(n: int, base: GenParams | None = None) -> list[GenParams]:
    """``n`` generator profiles standing in for distinct warehouses."""
    base = base or GenParams()
    shapes = [
        dict(zipf_s=1.0, orders_per_day_mean=120.0, basket_size_mean=2.5),
        dict(zipf_s=0.8, orders_per_day_mean=110.0, basket_size_mean=2.5),
        dict(zipf_s=1.2, orders_per_day_mean=130.0, basket_size_mean=2.2),
        dict(zipf_s=1.0, orders_per_day_mean=100.0, basket_size_mean=3.0),
        dict(zipf_s=1.1, orders_per_day_mean=140.0, basket_size_mean=2.0),
        dict(zipf_s=0.9, orders_per_day_mean=120.0, basket_size_mean=2.8),
    ]
    return [replace(base, seed=base.seed + 100 + i, **shapes[i % len(shapes)]) for i in range(n)]


def run_robustness(cfg: PipelineConfig, profiles: int = 6) -> pd.DataFrame:
    """Gap to OPT of OTPTO and PTO per generator profile."""
    rows = []
    for i, gen in enumerate(robustness_profiles(profiles, cfg.gen)):
        sub = replace(cfg, gen=gen, seed=gen.seed, dataset=None,
                      out_dir=str(Path(cfg.out_dir) / f"profile_{i + 1}") if cfg.out_dir else None)
        s = run_pipeline(sub).summary
        rows.append({"Profile": i + 1, "Seed": gen.seed, "zipf_s": gen.zipf_s,
                     "Orders/day": gen.orders_per_day_mean, "OTPTO": s["otpto_avg"], "PTO": s["pto_avg"],
                     "OPT": s["opt_avg"], "Gap OTPTO": s["gap_otpto"], "Gap PTO": s["gap_pto"]})
    table = pd.DataFrame(rows)
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _fmt_frame(table).to_csv(out / "robustness.csv", index=False, lineterminator="\n")
        (out / "robustness.md").write_text(_markdown(_fmt_frame(table)) + "\n", encoding="utf-8")
    return table
