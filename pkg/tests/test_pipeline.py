from dataclasses import replace

import pandas as pd
import pytest

from otpto.core import ValidationError, WarehouseConfig, read_plans_csv
from otpto.datagen import GenParams
from otpto.mlcore import GbdtParams
from otpto.om1 import RATE_ONLY, RATE_PLUS_GMV, SolverConfig
from otpto.pipeline import (
    ABLATION_GROUPS,
    REPORT_COLUMNS,
    PipelineConfig,
    PipelineError,
    load_history,
    prepare,
    robustness_profiles,
    run_ablation,
    run_pipeline,
    run_seeds,
    split_windows,
)

FAST1 = GbdtParams(objective="binary", metric="auc", n_estimators=40, early_stopping_rounds=10)
FAST2 = GbdtParams(objective="regression", metric="rmse", learning_rate=0.1, n_estimators=40,
                   early_stopping_rounds=10)


def small(**kw) -> PipelineConfig:
    cfg = PipelineConfig(
        gen=GenParams(n_skus=25, n_days=24, orders_per_day_mean=25.0, seed=1),
        warehouse=WarehouseConfig(K=6, N=60, B=2, T=7),
        pm1=FAST1, pm2=FAST2, train_days=None, seed=1,
        label_solver=SolverConfig(objective_mode=RATE_PLUS_GMV, node_limit=2000),
        opt_solver=SolverConfig(objective_mode=RATE_ONLY, node_limit=2000),
    )
    return replace(cfg, **kw)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = small(out_dir=str(out))
    return cfg, run_pipeline(cfg), out


def test_report_shape_and_invariants(small_run):
    cfg, report, _ = small_run
    t = report.table
    assert list(t.columns) == REPORT_COLUMNS
    assert len(t) == cfg.warehouse.T + 1 and t["Date"].iloc[-1] == "Avg"
    body = t.iloc[:-1]
    assert (body["OPT"] >= body[["OTPTO", "PTO"]].max(axis=1)).all()
    assert (body["Diff"] == body["OTPTO"] - body["PTO"]).all()
    assert report.summary["otpto_avg"] == pytest.approx(body["OTPTO"].mean())


def test_artifacts_written(small_run):
    _, report, out = small_run
    names = {p.name for p in out.iterdir()}
    for expected in ("orders.csv", "labels.csv", "features_train.csv", "features_test.csv",
                     "features_manifest.json", "models", "predictions.csv", "plans_otpto.csv",
                     "plans_pto.csv", "plans_opt.csv", "config.json", "report.csv", "report.md",
                     "report_inventory.csv", "report_summary.json"):
        assert expected in names
    cfg = small()
    plans = read_plans_csv(out / "plans_otpto.csv")
    for plan in plans.values():
        assert len(plan.entries) <= cfg.warehouse.K and plan.total <= cfg.warehouse.N
    assert "## Fulfillment rates" in (out / "report.md").read_text()


def test_rerun_is_byte_identical(small_run, tmp_path):
    cfg, _, out = small_run
    run_pipeline(replace(cfg, out_dir=str(tmp_path)))
    for name in ("report.csv", "report.md", "plans_otpto.csv", "predictions.csv", "labels.csv"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes(), name


def test_config_json_round_trip(small_run, tmp_path):
    cfg, _, out = small_run
    back = PipelineConfig.from_json(out / "config.json")
    assert back.to_dict() == cfg.to_dict()


def test_uncapacitated_warehouse_fulfils_everything():
    cfg = small(warehouse=WarehouseConfig(K=25, N=100_000, B=1, T=7))
    t = run_pipeline(cfg).table.iloc[:-1]
    assert (t["OPT"] == 1.0).all()
    assert (t["PTO"] == 1.0).all() and (t["OTPTO"] <= 1.0).all()


def test_split_windows():
    cfg = small(train_days=10)
    h = load_history(cfg)
    train, test = split_windows(h, cfg)
    assert len(test) == 7 and len(train) == 10 and train[-1] < test[0]
    short = small(gen=GenParams(n_skus=25, n_days=7, orders_per_day_mean=25.0))
    with pytest.raises(ValidationError):
        split_windows(load_history(short), short)


def test_ablation_columns():
    report = run_ablation(small(), ["A1", "A3"])
    t = report.ablation
    assert list(t.columns) == ["Date", "OTPTO", "A1", "A3"]
    assert list(t["Date"].iloc[-2:]) == ["Avg", "Diff"]
    assert t["OTPTO"].iloc[-1] == 0.0
    with pytest.raises(ValueError):
        run_ablation(small(), ["A9"])
    assert set(ABLATION_GROUPS) == {f"A{i}" for i in range(1, 7)}


def test_run_seeds_summary():
    _, table = run_seeds(small(), [1, 2])
    assert list(table["seed"]) == [1, 2]
    assert (table["gap_otpto"] >= 0).all() and (table["gap_pto"] >= 0).all()


def test_prepare_tags_stage_errors(tmp_path):
    bad = tmp_path / "orders.csv"
    bad.write_text("date,order_id,sku_id,quantity,unit_price\n2024-01-01,o,A,-1,1.0\n")
    with pytest.raises(PipelineError) as info:
        prepare(small(dataset=str(bad)))
    assert info.value.stage == "load"


def test_robustness_profiles_distinct():
    profiles = robustness_profiles(6)
    assert len({p.seed for p in profiles}) == 6
    assert len({(p.zipf_s, p.orders_per_day_mean, p.basket_size_mean) for p in profiles}) == 6


def test_report_frames_are_dataframes(small_run):
    _, report, _ = small_run
    assert isinstance(report.inventory, pd.DataFrame)
    assert set(report.inventory["Algo"]) == {"otpto", "pto"}
