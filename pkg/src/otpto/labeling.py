"""Historical-optimal labels and their cross-sectional / time-series smoothing.

Labels come from solving the stocking model on each past day with the GMV
tie-break objective. Optimal plans are sparse and jumpy (two near-identical
SKUs can land on opposite sides of the cut), so the selection labels are
smoothed before they are used as a classification target:

* cross-sectional: SKUs of one day are clustered on five sales statistics;
  a cluster whose stocked share exceeds ``mu`` is marked stocked as a whole;
* time series: a SKU stocked on more than ``gamma`` of its active days is
  marked stocked on all of them;
* merge: a label is raised to 1 only where both passes agree.

Smoothing only ever turns labels on; ``x_star`` is never touched.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd

from otpto.core import DayOrders, IndexedHistory, ValidationError, WarehouseConfig
from otpto.mlcore import kmeans, min_max_normalize
from otpto.om1 import PROVEN_OPTIMAL, RATE_PLUS_GMV, SolverConfig, solve_exact

log = logging.getLogger(__name__)

LABEL_COLUMNS = ["date", "sku_id", "x_star", "y_star", "y_cs", "y_ts", "y_final"]
KMEANS_FEATURES = ["sale_qtty", "ord_cnt", "gmv", "sku_ord_sale_qtty_mean", "sku_ord_sku_mean"]


@dataclass(frozen=True)
class SmoothingConfig:
    lam: int = 80
    mu: float = 0.8
    gamma: float = 0.8

    def __post_init__(self) -> None:
        if int(self.lam) != self.lam or self.lam < 1:
            raise ValueError("lam (cluster count) must be a positive integer")
        if not 0 < self.mu <= 1 or not 0 < self.gamma <= 1:
            raise ValueError("mu and gamma must lie in (0, 1]")


@dataclass
class LabelSet:
    """Per (day, SKU) labels for every SKU with sales that day.

    ``frame`` has the columns of :data:`LABEL_COLUMNS`, sorted by date then
    SKU id. Days whose solve stopped at a limit are listed in ``flagged_days``.
    """

    frame: pd.DataFrame
    flagged_days: tuple[date, ...] = ()
    statuses: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        missing = [c for c in LABEL_COLUMNS if c not in self.frame.columns]
        if missing:
            raise ValidationError(f"label frame lacks columns {missing}")
        self.frame = self.frame[LABEL_COLUMNS].sort_values(["date", "sku_id"], kind="mergesort").reset_index(drop=True)

    @property
    def dates(self) -> list[date]:
        return sorted(set(self.frame["date"]))

    def for_day(self, when: date) -> pd.DataFrame:
        return self.frame[self.frame["date"] == when]

    def check(self) -> None:
        f = self.frame
        if ((f["y_star"] == 1) != (f["x_star"] > 0)).any():
            raise ValidationError("y_star must be 1 exactly where x_star > 0")
        merged = np.maximum(f["y_star"], np.minimum(f["y_cs"], f["y_ts"]))
        if (merged != f["y_final"]).any():
            raise ValidationError("y_final must equal max(y_star, min(y_cs, y_ts))")

    def to_csv(self, path: str | Path) -> None:
        out = self.frame.copy()
        out["date"] = [d.isoformat() for d in out["date"]]
        out["x_star"] = [_fmt(v) for v in out["x_star"]]
        out.to_csv(path, index=False, lineterminator="\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "LabelSet":
        f = pd.read_csv(path, dtype={"sku_id": str})
        if list(f.columns) != LABEL_COLUMNS:
            raise ValidationError(f"labels CSV header must be {','.join(LABEL_COLUMNS)}")
        f["date"] = [date.fromisoformat(d) for d in f["date"]]
        for c in LABEL_COLUMNS[3:]:
            f[c] = f[c].astype(int)
        f["x_star"] = f["x_star"].astype(float)
        return cls(f)


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def _day_frame(day: DayOrders, stock: dict[str, float]) -> pd.DataFrame:
    skus = sorted(day.demand)
    x = np.array([float(stock.get(s, 0.0)) for s in skus])
    y = (x > 0).astype(int)
    return pd.DataFrame({
        "date": [day.day] * len(skus), "sku_id": skus, "x_star": x,
        "y_star": y, "y_cs": y, "y_ts": y, "y_final": y,
    })


def generate_optimal_labels(history: IndexedHistory, config: WarehouseConfig,
                            solver: SolverConfig | None = None) -> LabelSet:
    """Solve each historical day and record ``x_star``/``y_star`` for its selling SKUs."""
    solver = solver or SolverConfig(objective_mode=RATE_PLUS_GMV)
    if solver.objective_mode != RATE_PLUS_GMV:
        raise ValueError("labels are generated with the rate_plus_gmv objective")
    frames, flagged, statuses = [], [], {}
    for day in history.days:
        if day.n_orders == 0:
            continue
        out = solve_exact(day, config, solver)
        statuses[day.day] = out.status
        if out.status != PROVEN_OPTIMAL:
            flagged.append(day.day)
            log.warning("label day %s stopped at a limit: rate %.4f, bound %.4f",
                        day.day, out.objective_rate, out.upper_bound)
        frames.append(_day_frame(day, out.plan.entries))
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=LABEL_COLUMNS)
    return LabelSet(frame, tuple(flagged), statuses)


def kmeans_features(day: DayOrders) -> pd.DataFrame:
    """The five clustering statistics per SKU with sales on ``day``."""
    qty: dict[str, int] = {}
    cnt: dict[str, int] = {}
    gmv: dict[str, int] = {}
    ord_qty: dict[str, int] = {}
    ord_skus: dict[str, int] = {}
    for lines in day.lines:
        units = sum(q for _, q, _, _ in lines)
        for sku, q, _, price in lines:
            qty[sku] = qty.get(sku, 0) + q
            cnt[sku] = cnt.get(sku, 0) + 1
            gmv[sku] = gmv.get(sku, 0) + q * price
            ord_qty[sku] = ord_qty.get(sku, 0) + units
            ord_skus[sku] = ord_skus.get(sku, 0) + len(lines)
    skus = sorted(qty)
    return pd.DataFrame({
        "sku_id": skus,
        "sale_qtty": [qty[s] for s in skus],
        "ord_cnt": [cnt[s] for s in skus],
        "gmv": [gmv[s] / 100 for s in skus],
        "sku_ord_sale_qtty_mean": [ord_qty[s] / cnt[s] for s in skus],
        "sku_ord_sku_mean": [ord_skus[s] / cnt[s] for s in skus],
    })


def cross_sectional(y_star: np.ndarray, clusters: np.ndarray, mu: float) -> np.ndarray:
    y = np.asarray(y_star, dtype=int)
    out = y.copy()
    for c in np.unique(clusters):
        members = clusters == c
        if y[members].mean() > mu:
            out[members] = 1
    return out


def merge_labels(y_star, y_cs, y_ts) -> np.ndarray:
    y_star, y_cs, y_ts = (np.asarray(v, dtype=int) for v in (y_star, y_cs, y_ts))
    return np.where((y_cs == 1) & (y_ts == 1), 1, y_star)


def smooth_labels(labels: LabelSet, history: IndexedHistory, cfg: SmoothingConfig | None = None,
                  seed: int = 0) -> LabelSet:
    """Fill ``y_cs``, ``y_ts`` and ``y_final``."""
    cfg = cfg or SmoothingConfig()
    frame = labels.frame.copy()
    y_cs = frame["y_star"].to_numpy(dtype=int).copy()
    by_date = {d.day: d for d in history.days}

    for when, idx in frame.groupby("date", sort=True).groups.items():
        if when not in by_date:
            raise ValidationError(f"labels cover {when} but the history does not")
        day = by_date[when]
        feats = kmeans_features(day).set_index("sku_id")
        rows = np.asarray(idx)
        skus = frame.loc[rows, "sku_id"].to_numpy()
        active = np.array([s in feats.index for s in skus])
        if not active.any():
            continue
        act_rows = rows[active]
        data = min_max_normalize(feats.loc[skus[active], KMEANS_FEATURES].to_numpy(dtype=float))
        k = min(cfg.lam, len(act_rows))
        assign, _, _ = kmeans(data, k, seed=[seed, when.toordinal()])
        y_cs[act_rows] = cross_sectional(frame.loc[act_rows, "y_star"].to_numpy(), assign, cfg.mu)
    frame["y_cs"] = y_cs

    # time series: a SKU's active days are the label rows with positive sales
    sold = np.array([by_date[d].demand.get(s, 0) > 0 for d, s in zip(frame["date"], frame["sku_id"])], dtype=bool)
    y_ts = frame["y_star"].to_numpy(dtype=int).copy()
    work = pd.DataFrame({"sku_id": frame["sku_id"], "y": frame["y_star"], "sold": sold})
    for _, idx in work[work["sold"]].groupby("sku_id", sort=True).groups.items():
        rows = np.asarray(idx)
        if work.loc[rows, "y"].mean() > cfg.gamma:
            y_ts[rows] = 1
    frame["y_ts"] = y_ts
    frame["y_final"] = merge_labels(frame["y_star"], frame["y_cs"], frame["y_ts"])
    return LabelSet(frame, labels.flagged_days, dict(labels.statuses))

