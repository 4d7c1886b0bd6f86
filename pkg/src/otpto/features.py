"""Feature matrix for the selection and quantity learners, plus the PM0 baseline forecaster.

Every row is a (target day, SKU) pair. Aggregates for a row only read days in
``[train_start, cutoff]`` with ``cutoff = min(target - 1, train_end)``: train
rows see an expanding window of strictly earlier days and test rows see the
whole training window (one snapshot plans every test day).

Families
--------
decision     statistics of the historical optimal plans (raw ``x_star``/``y_star``)
sales_pred   PM0 forecast and its one-step residual statistics
clustering   one-hot K-Means cluster of [stocking-day share, mean optimal stock]
cross        statistics of the historical orders that contain the SKU
common       trailing sales, price, weekday and activity; a stand-in for the
             production attribute features, always enabled
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from otpto.core import IndexedHistory, StockPlan, ValidationError, simulate_day
from otpto.labeling import LabelSet
from otpto.mlcore import kmeans, min_max_normalize

FAMILIES = ("decision", "sales_pred", "clustering", "cross", "common")
KEY_COLUMNS = ["date", "sku_id", "window_end"]
PM0_COLUMNS = ["date", "sku_id", "q_hat", "residual_mean", "residual_std"]
WEEKDAYS = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")


@dataclass(frozen=True)
class FeatureConfig:
    rho: int = 4
    enabled_families: frozenset = frozenset(FAMILIES)
    pm0_window: int = 28
    seed: int = 0

    def __post_init__(self) -> None:
        fams = frozenset(self.enabled_families) | {"common"}
        unknown = fams - set(FAMILIES)
        if unknown:
            raise ValueError(f"unknown feature families {sorted(unknown)}")
        object.__setattr__(self, "enabled_families", fams)
        if int(self.rho) != self.rho or self.rho < 1:
            raise ValueError("rho must be a positive integer")
        if self.pm0_window < 1:
            raise ValueError("pm0_window must be >= 1")

    def without(self, family: str) -> "FeatureConfig":
        if family == "common":
            raise ValueError("the common family cannot be disabled")
        return FeatureConfig(self.rho, self.enabled_families - {family}, self.pm0_window, self.seed)


@dataclass
class FeatureMatrix:
    frame: pd.DataFrame
    columns: list[str]
    families: dict[str, str]

    def values(self) -> np.ndarray:
        return self.frame[self.columns].to_numpy(dtype=float)

    def rows_for(self, days: Iterable[date]) -> "FeatureMatrix":
        keep = self.frame["date"].isin(set(days))
        return FeatureMatrix(self.frame[keep].reset_index(drop=True), self.columns, self.families)

    def manifest(self) -> dict:
        return {
            "columns": self.columns,
            "families": {c: self.families[c] for c in self.columns},
            "notes": {"common": "stand-in for production attribute features"},
        }

    def to_csv(self, path: str | Path, manifest_path: str | Path | None = None) -> None:
        out = self.frame.copy()
        out["date"] = [d.isoformat() for d in out["date"]]
        out["window_end"] = [d.isoformat() if d is not None else "" for d in out["window_end"]]
        out.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
        if manifest_path is not None:
            Path(manifest_path).write_text(json.dumps(self.manifest(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_csv(cls, path: str | Path, manifest_path: str | Path) -> "FeatureMatrix":
        man = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
        f = pd.read_csv(path, dtype={"sku_id": str, "window_end": str}, keep_default_na=False)
        f["date"] = [date.fromisoformat(d) for d in f["date"]]
        f["window_end"] = [date.fromisoformat(d) if d else None for d in f["window_end"]]
        return cls(f, list(man["columns"]), dict(man["families"]))


# ---------------------------------------------------------------------------
# Dense per-day arrays
# ---------------------------------------------------------------------------

class _Calendar:
    """Dense day x SKU arrays starting at ``start``; days without orders are zero."""

    def __init__(self, history: IndexedHistory, skus: Sequence[str], start: date, end: date):
        self.start = start
        self.n_days = (end - start).days + 1
        self.skus = list(skus)
        self.col = {s: j for j, s in enumerate(self.skus)}
        shape = (self.n_days, len(self.skus))
        self.sales = np.zeros(shape)
        self.revenue = np.zeros(shape)
        self.ord_cnt = np.zeros(shape)
        self.ord_units = np.zeros(shape)
        self.ord_skus = np.zeros(shape)
        self.ord_gmv = np.zeros(shape)
        for day in history.days:
            d = self.index(day.day)
            if not 0 <= d < self.n_days:
                continue
            for lines, cents in zip(day.lines, day.gmv_cents):
                units = sum(q for _, q, _, _ in lines)
                for sku, q, _, price in lines:
                    j = self.col.get(sku)
                    if j is None:
                        continue
                    self.sales[d, j] += q
                    self.revenue[d, j] += q * price / 100
                    self.ord_cnt[d, j] += 1
                    self.ord_units[d, j] += units
                    self.ord_skus[d, j] += len(lines)
                    self.ord_gmv[d, j] += cents / 100

    def index(self, when: date) -> int:
        return (when - self.start).days


def _prefix(a: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0] + 1,) + a.shape[1:])
    np.cumsum(a, axis=0, out=out[1:])
    return out


# ---------------------------------------------------------------------------
# PM0
# ---------------------------------------------------------------------------

_EWMA_WEIGHTS = 0.5 ** (np.arange(7) / 3.0)  # age 0 (most recent) .. 6, half-life 3 days


def _pm0_point(sales: np.ndarray, cutoff: int, target: int) -> np.ndarray:
    """Forecast for row ``target`` using rows ``0..cutoff`` of ``sales``."""
    n_avail = cutoff + 1
    if n_avail <= 0:
        return np.zeros(sales.shape[1])
    if n_avail < 7:
        return sales[:n_avail].mean(axis=0)
    lags = [target - 7 * k for k in range(1, 5) if 0 <= target - 7 * k <= cutoff]
    recent = sales[cutoff - 6:cutoff + 1][::-1]
    ewma = _EWMA_WEIGHTS @ recent / _EWMA_WEIGHTS.sum()
    if not lags:
        return ewma
    return 0.5 * sales[lags].mean(axis=0) + 0.5 * ewma


def _pm0_on_calendar(cal: _Calendar, targets: Sequence[date], cutoffs: Sequence[date | None],
                     window: int) -> pd.DataFrame:
    sales = cal.sales
    one_step = np.zeros_like(sales)
    for s in range(cal.n_days):
        one_step[s] = _pm0_point(sales, s - 1, s)
    resid = sales - one_step
    out = []
    for t, c in zip(targets, cutoffs):
        ti = cal.index(t)
        ci = min(ti - 1, cal.index(c)) if c is not None else ti - 1
        q = _pm0_point(sales, ci, ti)
        lo = max(1, ci - window + 1)  # day 0 has no prior data to forecast from
        if ci >= lo:
            r = resid[lo:ci + 1]
            r_mean, r_std = r.mean(axis=0), r.std(axis=0)
        else:
            r_mean = r_std = np.zeros(len(cal.skus))
        out.append(pd.DataFrame({
            "date": [t] * len(cal.skus), "sku_id": cal.skus,
            "q_hat": q, "residual_mean": r_mean, "residual_std": r_std,
        }))
    if not out:
        return pd.DataFrame(columns=PM0_COLUMNS)
    return pd.concat(out, ignore_index=True)


def pm0_forecast(history: IndexedHistory, target_days: Sequence[date], window: int = 28,
                 cutoff: date | None = None, skus: Sequence[str] | None = None) -> pd.DataFrame:
    """Baseline sales forecast per (target day, SKU).

    ``q_hat = 0.5 * same-weekday mean of the last four weeks + 0.5 * 7-day
    EWMA (half-life 3 days)``, with a plain mean when fewer than 7 days of
    history exist. Only days up to ``min(target - 1, cutoff)`` are read.
    Residual statistics are over one-step-ahead backtest errors of the
    ``window`` days ending at that cutoff.
    """
    targets = sorted(set(target_days))
    skus = list(skus) if skus is not None else history.skus
    if not targets:
        return pd.DataFrame(columns=PM0_COLUMNS)
    if not history.days:
        zero = np.zeros(len(skus) * len(targets))
        return pd.DataFrame({"date": np.repeat(targets, len(skus)), "sku_id": skus * len(targets),
                             "q_hat": zero, "residual_mean": zero, "residual_std": zero})
    start = history.days[0].day
    end = max(targets[-1], history.days[-1].day)
    targets_in = [t for t in targets if t >= start]
    cal = _Calendar(history, skus, start, end)
    frame = _pm0_on_calendar(cal, targets_in, [cutoff] * len(targets_in), window)
    early = [t for t in targets if t < start]
    if early:
        zero = np.zeros(len(skus) * len(early))
        pre = pd.DataFrame({"date": np.repeat(early, len(skus)).tolist(), "sku_id": skus * len(early),
                            "q_hat": zero, "residual_mean": zero, "residual_std": zero})
        frame = pd.concat([pre, frame], ignore_index=True)
    return frame.reset_index(drop=True)


# ---------------------------------------------------------------------------
# Feature matrix
# ---------------------------------------------------------------------------

def _fulfilment_by_sku(history: IndexedHistory, labels: LabelSet, cal: _Calendar, last: int):
    """Orders containing each SKU that the optimal plan fulfilled (count, GMV) per day."""
    cnt = np.zeros((cal.n_days, len(cal.skus)))
    gmv = np.zeros_like(cnt)
    plans: dict[date, dict[str, float]] = {}
    stocked = labels.frame[labels.frame["x_star"] > 0]
    for d, s, x in zip(stocked["date"], stocked["sku_id"], stocked["x_star"]):
        plans.setdefault(d, {})[s] = float(x)
    for day in history.days:
        d = cal.index(day.day)
        if not 0 <= d <= last or day.day not in plans:
            continue
        report = simulate_day(day, StockPlan(day.day, plans[day.day]))
        for lines, ok, cents in zip(day.lines, report.fulfilled, day.gmv_cents):
            if not ok:
                continue
            for sku, _, _, _ in lines:
                j = cal.col.get(sku)
                if j is not None:
                    cnt[d, j] += 1
                    gmv[d, j] += cents / 100
    return cnt, gmv


def _safe_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(b > 0, a / np.where(b > 0, b, 1), 0.0)


def _cluster_onehot(share: np.ndarray, mean_x: np.ndarray, rho: int, seed) -> np.ndarray:
    """K-Means on the normalized pair; clusters renumbered by ascending centroid."""
    data = min_max_normalize(np.column_stack([share, mean_x]))
    assign, centers, _ = kmeans(data, rho, seed=seed)
    rank = np.empty(len(centers), dtype=int)
    rank[np.lexsort((centers[:, 1], centers[:, 0]))] = np.arange(len(centers))
    out = np.zeros((len(share), rho))
    out[np.arange(len(share)), rank[assign]] = 1.0
    return out


def build_feature_matrix(history: IndexedHistory, labels: LabelSet, cfg: FeatureConfig,
                         train_start: date, train_end: date, target_days: Sequence[date],
                         skus: Sequence[str] | None = None, pm0: pd.DataFrame | None = None) -> FeatureMatrix:
    """Rows for every (target day, SKU); ``skus`` defaults to SKUs sold in the train window."""
    if train_end < train_start:
        raise ValidationError("train_end precedes train_start")
    targets = sorted(set(target_days))
    if targets and targets[0] < train_start:
        raise ValidationError("target days must not precede the train window")
    train_hist = history.between(train_start, train_end)
    skus = list(skus) if skus is not None else train_hist.skus
    fams = cfg.enabled_families
    end = max([train_end] + targets)
    cal = _Calendar(train_hist, skus, train_start, end)
    last_train = cal.index(train_end)
    m = len(skus)

    x_star = np.zeros((cal.n_days, m))
    y_star = np.zeros((cal.n_days, m))
    lf = labels.frame
    in_win = lf[(lf["date"] >= train_start) & (lf["date"] <= train_end)]
    for d, s, x, y in zip(in_win["date"], in_win["sku_id"], in_win["x_star"], in_win["y_star"]):
        j = cal.col.get(s)
        if j is not None:
            x_star[cal.index(d), j] = x
            y_star[cal.index(d), j] = y
    active = (cal.sales > 0).astype(float)

    P = {name: _prefix(arr) for name, arr in {
        "x": x_star, "y": y_star, "active": active, "sales": cal.sales, "sales2": cal.sales ** 2,
        "revenue": cal.revenue, "ord_cnt": cal.ord_cnt, "ord_units": cal.ord_units,
        "ord_skus": cal.ord_skus, "ord_gmv": cal.ord_gmv,
    }.items()}
    xmax = np.maximum.accumulate(np.vstack([np.zeros((1, m)), x_star]), axis=0)
    if "decision" in fams:
        fcnt, fgmv = _fulfilment_by_sku(train_hist, labels, cal, last_train)
        fcnt_s, fgmv_s = _prefix(fcnt * (y_star > 0)), _prefix(fgmv * (y_star > 0))

    if "sales_pred" in fams:
        if pm0 is None:
            pm0 = pm0_forecast(train_hist, targets, cfg.pm0_window, cutoff=train_end, skus=skus)
        pm0_idx = pm0.set_index(["date", "sku_id"])

    columns: list[str] = []
    families: dict[str, str] = {}

    def add(family: str, names: list[str]) -> None:
        for n in names:
            columns.append(n)
            families[n] = family

    if "decision" in fams:
        add("decision", ["dec_x_mean", "dec_x_max", "dec_stock_days", "dec_stock_share",
                         "dec_fulfilled_orders_mean", "dec_fulfilled_gmv_mean"])
    if "sales_pred" in fams:
        add("sales_pred", ["pm0_q_hat", "pm0_residual_mean", "pm0_residual_std"])
    if "clustering" in fams:
        add("clustering", [f"clu_{k}" for k in range(cfg.rho)])
    if "cross" in fams:
        add("cross", ["cross_order_qty_mean", "cross_order_skus_mean", "cross_order_gmv_mean", "cross_order_count"])
    add("common", ["com_sales_mean_7", "com_sales_std_7", "com_sales_mean_28", "com_sales_std_28",
                   "com_price_mean", "com_active_days"] + [f"com_dow_{w}" for w in WEEKDAYS])

    blocks = []
    for t in targets:
        ti = cal.index(t)
        ci = min(ti - 1, last_train)  # last readable row
        k = ci + 1  # rows in window
        feats: dict[str, np.ndarray] = {}
        act = P["active"][k]
        if "decision" in fams or "clustering" in fams:
            days = max(k, 1)
            x_mean = P["x"][k] / days
            stock_days = P["y"][k]
            share = _safe_div(stock_days, act)
        if "decision" in fams:
            feats["dec_x_mean"] = x_mean
            feats["dec_x_max"] = xmax[k]
            feats["dec_stock_days"] = stock_days
            feats["dec_stock_share"] = share
            feats["dec_fulfilled_orders_mean"] = _safe_div(fcnt_s[k], stock_days)
            feats["dec_fulfilled_gmv_mean"] = _safe_div(fgmv_s[k], stock_days)
        if "sales_pred" in fams:
            sub = pm0_idx.loc[t].reindex(skus)
            feats["pm0_q_hat"] = sub["q_hat"].to_numpy(dtype=float)
            feats["pm0_residual_mean"] = sub["residual_mean"].to_numpy(dtype=float)
            feats["pm0_residual_std"] = sub["residual_std"].to_numpy(dtype=float)
        if "clustering" in fams:
            if k > 0 and m > 0:
                onehot = _cluster_onehot(share, x_mean, cfg.rho, [cfg.seed, ci, k])
            else:
                onehot = np.zeros((m, cfg.rho))
                onehot[:, 0] = 1.0
            for c in range(cfg.rho):
                feats[f"clu_{c}"] = onehot[:, c]
        if "cross" in fams:
            n_ord = P["ord_cnt"][k]
            feats["cross_order_qty_mean"] = _safe_div(P["ord_units"][k], n_ord)
            feats["cross_order_skus_mean"] = _safe_div(P["ord_skus"][k], n_ord)
            feats["cross_order_gmv_mean"] = _safe_div(P["ord_gmv"][k], n_ord)
            feats["cross_order_count"] = n_ord
        for span in (7, 28):
            lo = max(0, k - span)
            n = k - lo
            if n > 0:
                mean = (P["sales"][k] - P["sales"][lo]) / n
                var = (P["sales2"][k] - P["sales2"][lo]) / n - mean ** 2
                std = np.sqrt(np.maximum(var, 0.0))
            else:
                mean = std = np.zeros(m)
            feats[f"com_sales_mean_{span}"] = mean
            feats[f"com_sales_std_{span}"] = std
        feats["com_price_mean"] = _safe_div(P["revenue"][k], P["sales"][k])
        feats["com_active_days"] = act
        for w, name in enumerate(WEEKDAYS):
            feats[f"com_dow_{name}"] = np.full(m, float(t.weekday() == w))
        block = pd.DataFrame({c: feats[c] for c in columns})
        block.insert(0, "window_end", [train_start + timedelta(days=ci) if k > 0 else None] * m)
        block.insert(0, "sku_id", skus)
        block.insert(0, "date", [t] * m)
        blocks.append(block)
    frame = pd.concat(blocks, ignore_index=True) if blocks else pd.DataFrame(columns=KEY_COLUMNS + columns)
    return FeatureMatrix(frame, columns, families)
