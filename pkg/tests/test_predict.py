from datetime import date, timedelta

import numpy as np
import pandas as pd
import pytest

from otpto.core import ValidationError
from otpto.features import FeatureMatrix
from otpto.labeling import LABEL_COLUMNS, LabelSet
from otpto.mlcore import GbdtModel, GbdtParams, eval_metric
from otpto.predict import (
    PM1_PARAMS,
    PM2_PARAMS,
    PREDICTION_COLUMNS,
    PredictionBundle,
    predict_models,
    train_models,
    validation_split,
)

START = date(2024, 1, 1)
FAST1 = GbdtParams(objective="binary", metric="auc", n_estimators=80, early_stopping_rounds=20)
FAST2 = GbdtParams(objective="regression", metric="rmse", learning_rate=0.1, n_estimators=300,
                   early_stopping_rounds=30, subsample=1.0, colsample_bytree=1.0)


def synthetic(n_days=20, n_skus=30, seed=0):
    """Features (pop, f2) with noiseless labels: stocked iff pop + wave > 0.5, x* = 20·pop + 5·f2."""
    rng = np.random.default_rng(seed)
    pop = np.linspace(0.0, 1.0, n_skus)
    rows, labels = [], []
    for t in range(n_days):
        when = START + timedelta(days=t)
        wave = 0.3 * np.sin(t)
        f2 = rng.uniform(size=n_skus)
        for i in range(n_skus):
            y = int(pop[i] + wave > 0.5)
            x = round(20 * pop[i] + 5 * f2[i], 6) + 5 if y else 0.0
            rows.append({"date": when, "sku_id": f"s{i:02d}", "window_end": when, "pop": pop[i], "f2": f2[i],
                         "pm0_q_hat": 10 * pop[i]})
            labels.append({"date": when, "sku_id": f"s{i:02d}", "x_star": x, "y_star": y, "y_cs": y, "y_ts": y,
                           "y_final": y})
    cols = ["pop", "f2", "pm0_q_hat"]
    matrix = FeatureMatrix(pd.DataFrame(rows), cols, {c: "common" for c in cols})
    return matrix, LabelSet(pd.DataFrame(labels, columns=LABEL_COLUMNS))


def kendall_over_untied(a, b):
    conc = disc = 0
    for i in range(len(a)):
        for j in range(i + 1, len(a)):
            s = np.sign(a[i] - a[j]) * np.sign(b[i] - b[j])
            conc += s > 0
            disc += s < 0
    return (conc - disc) / max(conc + disc, 1)


def test_sample_strategy_row_counts():
    matrix, labels = synthetic(n_days=5, n_skus=2)
    f = labels.frame.copy()
    f["x_star"] = [0.0, 0.0, 0.0, 0.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]
    f["y_star"] = f["y_final"] = f["y_cs"] = f["y_ts"] = (f["x_star"] > 0).astype(int)
    res = train_models(matrix, LabelSet(f), FAST1, FAST2)
    m = res.metrics
    assert (m["pm1_samples"], m["pm2_samples"]) == (10, 6)
    assert m["pm2_rows"] + m["pm2_valid_rows"] == 6


def test_unstocked_rows_do_not_change_pm2():
    matrix, labels = synthetic()
    a = train_models(matrix, labels, FAST1, FAST2, seed=3)
    # extra unstocked SKU rows enter PM1 only
    extra = matrix.frame[matrix.frame["sku_id"] == "s00"].assign(sku_id="zz")
    big = FeatureMatrix(pd.concat([matrix.frame, extra], ignore_index=True), matrix.columns, matrix.families)
    b = train_models(big, labels, FAST1, FAST2, seed=3)
    assert a.pm2.to_json() == b.pm2.to_json()


def test_pm2_learns_noiseless_target():
    matrix, labels = synthetic(n_days=30)
    res = train_models(matrix, labels, FAST1, FAST2)
    stocked = labels.frame["x_star"] > 0
    assert res.metrics["pm2_valid_rmse"] <= 0.05 * labels.frame.loc[stocked, "x_star"].std()


def test_selection_ranking_matches_frequency():
    matrix, labels = synthetic()
    res = train_models(matrix, labels, PM1_PARAMS, PM2_PARAMS)
    day = START + timedelta(days=3)
    bundle = predict_models(res.pm1, res.pm2, matrix.rows_for([day]))
    freq = labels.frame.groupby("sku_id")["y_star"].mean().reindex(bundle.frame["sku_id"]).to_numpy()
    assert kendall_over_untied(bundle.frame["y_hat"].to_numpy(), freq) >= 0.8


def test_single_class_and_empty_pm2_errors():
    matrix, labels = synthetic(n_days=4, n_skus=3)
    f = labels.frame.assign(y_final=1)
    with pytest.raises(ValidationError):
        train_models(matrix, LabelSet(f), FAST1, FAST2)
    g = labels.frame.assign(x_star=0.0, y_star=0)
    g.loc[0, "y_final"] = 1
    g.loc[1, "y_final"] = 0
    with pytest.raises(ValidationError):
        train_models(matrix, LabelSet(g), FAST1, FAST2)


def test_zero_tree_models_predict_base():
    matrix, _ = synthetic(n_days=2, n_skus=3)
    pm1 = GbdtModel([], 0.0, "binary", 0, 3, feature_names=matrix.columns)
    pm2 = GbdtModel([], -2.0, "regression", 0, 3, feature_names=matrix.columns)
    b = predict_models(pm1, pm2, matrix)
    assert (b.frame["y_hat"] == 0.5).all() and (b.frame["x_hat"] == 0.0).all()
    assert np.allclose(b.frame["q_hat"], matrix.frame["pm0_q_hat"])


def test_schema_mismatch():
    matrix, labels = synthetic(n_days=6, n_skus=6)
    res = train_models(matrix, labels, FAST1, FAST2)
    other = FeatureMatrix(matrix.frame, ["f2", "pop", "pm0_q_hat"], matrix.families)
    with pytest.raises(ValidationError):
        predict_models(res.pm1, res.pm2, other)


def test_determinism_and_save(tmp_path):
    matrix, labels = synthetic(n_days=8)
    a = train_models(matrix, labels, FAST1, FAST2, seed=5)
    b = train_models(matrix, labels, FAST1, FAST2, seed=5)
    assert a.pm1.to_json() == b.pm1.to_json() and a.pm2.to_json() == b.pm2.to_json()
    a.save(tmp_path)
    assert {p.name for p in tmp_path.iterdir()} == {"pm1.json", "pm2.json", "train_metrics.json"}


def test_validation_split_is_time_ordered():
    days = [START + timedelta(days=t) for t in range(10)]
    fit, valid = validation_split(days[::-1])
    assert valid == set(days[8:]) and fit == set(days[:8])
    assert validation_split(days[:1]) == ({days[0]}, set())


def test_bundle_validation_and_csv(tmp_path):
    frame = pd.DataFrame({"date": [START], "sku_id": ["a"], "y_hat": [0.3], "x_hat": [2.0], "q_hat": [1.0]})
    b = PredictionBundle(frame)
    b.to_csv(tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == ",".join(PREDICTION_COLUMNS)
    assert PredictionBundle.from_csv(tmp_path / "p.csv").frame.equals(frame)
    for bad in ({"y_hat": [1.0]}, {"x_hat": [-1.0]}):
        with pytest.raises(ValidationError):
            PredictionBundle(frame.assign(**bad))


def test_auc_reported_on_validation_days():
    matrix, labels = synthetic()
    res = train_models(matrix, labels, FAST1, FAST2)
    assert 0.5 <= res.metrics["pm1_valid_auc"] <= 1.0
    assert eval_metric("auc", [0, 1], [0.2, 0.4]) == 1.0
