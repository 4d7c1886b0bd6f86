"""Seeded synthetic order streams.

Stands in for real warehouse order logs: Zipf-distributed SKU popularity,
weekday-scaled Poisson order arrivals, shifted-Poisson basket sizes and
per-SKU log-normal prices fixed for the whole horizon.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from otpto.core import OrderLine, write_orders_csv

DEFAULT_WEEKDAY_MULTIPLIERS = (0.95, 0.9, 0.9, 0.95, 1.05, 1.15, 1.1)


@dataclass(frozen=True)
class GenParams:
    n_skus: int = 200
    n_days: int = 97
    orders_per_day_mean: float = 120.0
    basket_size_mean: float = 2.5
    zipf_s: float = 1.0
    price_log_mean: float = 2.5
    price_log_sd: float = 0.6
    weekday_multipliers: tuple[float, ...] = DEFAULT_WEEKDAY_MULTIPLIERS
    seed: int = 0
    start_date: date = date(2023, 6, 1)
    quantity_extra_mean: float = 0.5

    def __post_init__(self) -> None:
        if self.n_skus < 2:
            raise ValueError("n_skus must be >= 2")
        if self.n_days < 1:
            raise ValueError("n_days must be >= 1")
        if self.orders_per_day_mean <= 0 or self.basket_size_mean <= 0:
            raise ValueError("orders_per_day_mean and basket_size_mean must be positive")
        if self.zipf_s <= 0:
            raise ValueError("zipf_s must be positive")
        if len(self.weekday_multipliers) != 7:
            raise ValueError("weekday_multipliers needs 7 values (Monday first)")
        object.__setattr__(self, "weekday_multipliers", tuple(float(v) for v in self.weekday_multipliers))

    def to_json(self) -> str:
        d = asdict(self)
        d["start_date"] = self.start_date.isoformat()
        d["weekday_multipliers"] = list(self.weekday_multipliers)
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "GenParams":
        d = dict(d)
        if isinstance(d.get("start_date"), str):
            d["start_date"] = date.fromisoformat(d["start_date"])
        if "weekday_multipliers" in d:
            d["weekday_multipliers"] = tuple(d["weekday_multipliers"])
        return cls(**d)


def zipf_probabilities(n: int, s: float) -> np.ndarray:
    """Probability of popularity ranks 1..n under a finite Zipf law."""
    weights = np.arange(1, n + 1, dtype=float) ** -s
    return weights / weights.sum()


def sku_ids(n: int) -> list[str]:
    width = max(4, len(str(n)))
    return [f"sku{i:0{width}d}" for i in range(n)]


def generate_synthetic(params: GenParams) -> list[OrderLine]:
    rng = np.random.default_rng(params.seed)
    ids = sku_ids(params.n_skus)
    # popularity rank -> sku id is shuffled so ids carry no rank information
    by_rank = [ids[i] for i in rng.permutation(params.n_skus)]
    prices = np.round(np.exp(rng.normal(params.price_log_mean, params.price_log_sd, params.n_skus)), 2)
    prices = np.maximum(prices, 0.01)
    price_of = {sku: float(p) for sku, p in zip(by_rank, prices)}
    probs = zipf_probabilities(params.n_skus, params.zipf_s)

    lines: list[OrderLine] = []
    for t in range(params.n_days):
        day = params.start_date + timedelta(days=t)
        lam = params.orders_per_day_mean * params.weekday_multipliers[day.weekday()]
        n_orders = int(rng.poisson(lam))
        for k in range(n_orders):
            size = 1 + int(rng.poisson(max(params.basket_size_mean - 1.0, 0.0)))
            size = min(size, params.n_skus)
            picks = rng.choice(params.n_skus, size=size, replace=False, p=probs)
            qty = 1 + rng.poisson(params.quantity_extra_mean, size=size)
            oid = f"{day:%Y%m%d}-{k:05d}"
            for r, q in zip(picks, qty):
                sku = by_rank[int(r)]
                lines.append(OrderLine(day, oid, sku, int(q), price_of[sku]))
    return lines


def write_dataset(params: GenParams, out_dir: str | Path) -> Path:
    """Generate orders into ``orders.csv`` with a ``params.json`` sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "orders.csv"
    write_orders_csv(path, generate_synthetic(params))
    (out / "params.json").write_text(params.to_json() + "\n", encoding="utf-8")
    return path
