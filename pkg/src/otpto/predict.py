"""Train the selection (PM1) and quantity (PM2) learners and score target days.

PM1 is a binary classifier on the smoothed selection label ``y_final`` over
every (day, SKU) row. PM2 regresses the raw optimal quantity ``x_star`` and
only sees rows where the SKU was actually stocked. Both hold out the last 20%
of training days, in time order, for early stopping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd

from otpto.core import ValidationError
from otpto.features import FeatureMatrix
from otpto.labeling import LabelSet
from otpto.mlcore import BINARY, REGRESSION, GbdtModel, GbdtParams, eval_metric, predict_gbdt, train_gbdt

PREDICTION_COLUMNS = ["date", "sku_id", "y_hat", "x_hat", "q_hat"]

_SHARED = dict(subsample=0.8, subsample_freq=1, num_leaves=31, max_depth=5, min_child_samples=5,
               colsample_bytree=0.8, n_estimators=600, early_stopping_rounds=50)
PM1_PARAMS = GbdtParams(objective=BINARY, metric="auc", learning_rate=0.05, reg_alpha=0.0, reg_lambda=0.0, **_SHARED)
PM2_PARAMS = GbdtParams(objective=REGRESSION, metric="rmse", learning_rate=0.1, reg_alpha=0.1, reg_lambda=0.1,
                        **_SHARED)


@dataclass
class PredictionBundle:
    frame: pd.DataFrame  # PREDICTION_COLUMNS

    def __post_init__(self) -> None:
        f = self.frame
        if len(f) and (((f["y_hat"] <= 0) | (f["y_hat"] >= 1)).any() or (f["x_hat"] < 0).any()):
            raise ValidationError("y_hat must lie in (0, 1) and x_hat must be >= 0")

    def for_day(self, when: date) -> "PredictionBundle":
        return PredictionBundle(self.frame[self.frame["date"] == when].reset_index(drop=True))

    @property
    def dates(self) -> list[date]:
        return sorted(set(self.frame["date"]))

    def to_csv(self, path: str | Path) -> None:
        out = self.frame[PREDICTION_COLUMNS].copy()
        out["date"] = [d.isoformat() for d in out["date"]]
        out.to_csv(path, index=False, lineterminator="\n", float_format="%.12g")

    @classmethod
    def from_csv(cls, path: str | Path) -> "PredictionBundle":
        f = pd.read_csv(path, dtype={"sku_id": str})
        if list(f.columns) != PREDICTION_COLUMNS:
            raise ValidationError(f"predictions CSV header must be {','.join(PREDICTION_COLUMNS)}")
        f["date"] = [date.fromisoformat(d) for d in f["date"]]
        for c in PREDICTION_COLUMNS[2:]:
            f[c] = f[c].astype(float)
        return cls(f)


@dataclass
class TrainResult:
    pm1: GbdtModel
    pm2: GbdtModel
    metrics: dict

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "pm1.json").write_text(self.pm1.to_json() + "\n", encoding="utf-8")
        (out / "pm2.json").write_text(self.pm2.to_json() + "\n", encoding="utf-8")
        (out / "train_metrics.json").write_text(json.dumps(self.metrics, indent=2, sort_keys=True) + "\n",
                                                encoding="utf-8")


def _targets(matrix: FeatureMatrix, labels: LabelSet) -> pd.DataFrame:
    keys = matrix.frame[["date", "sku_id"]]
    lab = labels.frame[["date", "sku_id", "x_star", "y_star", "y_final"]]
    merged = keys.merge(lab, on=["date", "sku_id"], how="left", validate="one_to_one")
    # SKUs without a label row had no sales that day: never stocked
    return merged.fillna({"x_star": 0.0, "y_star": 0, "y_final": 0})


def validation_split(days: list[date], fraction: float = 0.2) -> tuple[set[date], set[date]]:
    """Earlier days for fitting, the final ``fraction`` of days for early stopping."""
    days = sorted(set(days))
    n_valid = int(round(len(days) * fraction))
    if len(days) > 1:
        n_valid = min(max(n_valid, 1), len(days) - 1)
    else:
        n_valid = 0
    return set(days[:len(days) - n_valid]), set(days[len(days) - n_valid:])


def train_models(matrix: FeatureMatrix, labels: LabelSet, pm1_params: GbdtParams = PM1_PARAMS,
                 pm2_params: GbdtParams = PM2_PARAMS, keep_unstocked_in_pm2: bool = False,
                 use_smoothed: bool = True, seed: int | None = None) -> TrainResult:
    """Fit PM1 on every row and PM2 on stocked rows (all rows when ``keep_unstocked_in_pm2``)."""
    if seed is not None:
        pm1_params = replace(pm1_params, seed=seed)
        pm2_params = replace(pm2_params, seed=seed + 1)
    tgt = _targets(matrix, labels)
    x = matrix.values()
    y1 = tgt["y_final" if use_smoothed else "y_star"].to_numpy(dtype=float)
    x2 = tgt["x_star"].to_numpy(dtype=float)
    if len(np.unique(y1)) < 2:
        raise ValidationError("PM1 target has a single class")
    fit_days, valid_days = validation_split(list(matrix.frame["date"]))
    is_fit = matrix.frame["date"].isin(fit_days).to_numpy()
    is_valid = ~is_fit

    valid1 = is_valid if len(np.unique(y1[is_valid])) == 2 else np.zeros_like(is_valid)
    pm1 = train_gbdt(x[is_fit], y1[is_fit], x[valid1], y1[valid1], pm1_params, matrix.columns)

    rows2 = np.ones(len(x2), dtype=bool) if keep_unstocked_in_pm2 else x2 > 0
    if not rows2.any():
        raise ValidationError("PM2 has no stocked rows to train on")
    fit2, valid2 = rows2 & is_fit, rows2 & is_valid
    if not fit2.any():
        fit2, valid2 = rows2, np.zeros_like(rows2)
    pm2 = train_gbdt(x[fit2], x2[fit2], x[valid2], x2[valid2], pm2_params, matrix.columns)

    metrics = {
        "pm1_samples": int(len(y1)), "pm2_samples": int(rows2.sum()),
        "pm1_rows": int(is_fit.sum()), "pm1_valid_rows": int(valid1.sum()),
        "pm2_rows": int(fit2.sum()), "pm2_valid_rows": int(valid2.sum()),
        "pm1_best_iteration": pm1.best_iteration, "pm2_best_iteration": pm2.best_iteration,
        "pm1_valid_auc": eval_metric("auc", y1[valid1], predict_gbdt(pm1, x[valid1])) if valid1.any() else None,
        "pm2_valid_rmse": eval_metric("rmse", x2[valid2], predict_gbdt(pm2, x[valid2])) if valid2.any() else None,
    }
    return TrainResult(pm1, pm2, metrics)


def predict_models(pm1: GbdtModel, pm2: GbdtModel, matrix: FeatureMatrix,
                   pm0: pd.DataFrame | None = None) -> PredictionBundle:
    """Score target rows. ``q_hat`` comes from ``pm0`` or the matrix's PM0 column."""
    for name, model in (("PM1", pm1), ("PM2", pm2)):
        if model.feature_names is not None and list(model.feature_names) != list(matrix.columns):
            raise ValidationError(f"{name} was trained on a different feature schema")
    x = matrix.values()
    keys = matrix.frame[["date", "sku_id"]].reset_index(drop=True)
    y_hat = predict_gbdt(pm1, x) if len(x) else np.zeros(0)
    x_hat = np.maximum(predict_gbdt(pm2, x), 0.0) if len(x) else np.zeros(0)
    if pm0 is not None:
        q = keys.merge(pm0[["date", "sku_id", "q_hat"]], on=["date", "sku_id"], how="left")["q_hat"]
        q_hat = q.fillna(0.0).to_numpy(dtype=float)
    elif "pm0_q_hat" in matrix.frame.columns:
        q_hat = matrix.frame["pm0_q_hat"].to_numpy(dtype=float)
    else:
        raise ValidationError("q_hat needs PM0 outputs or a pm0_q_hat column")
    frame = keys.assign(y_hat=y_hat, x_hat=x_hat, q_hat=np.maximum(q_hat, 0.0))
    return PredictionBundle(frame[PREDICTION_COLUMNS])
