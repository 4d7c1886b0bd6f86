"""Turn per-SKU predictions into a feasible stock plan (greedy post-processing).

OTPTO ranks SKUs by the selection probability ``y_hat``, keeps the top K,
then orders them by predicted quantity ``x_hat`` with provisional stock
``max(B, min(x_hat, q_hat))``. PTO ranks by predicted sales ``q_hat`` and
stocks ``max(B, q_hat)``. Both branches then rescale the provisional
quantities by ``alpha = N / sum`` and admit SKUs in order until the next one
would overflow N.

Scaled quantities are rounded half away from zero and clamped up to B, so
every admitted SKU meets the minimum; the break keeps the total within N.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from datetime import date

from otpto.core import StockPlan, WarehouseConfig

log = logging.getLogger(__name__)

OTPTO = "otpto"
PTO = "pto"


@dataclass(frozen=True)
class PostprocessConfig:
    algo_type: str
    warehouse: WarehouseConfig
    # "q_hat" follows the prose description of the baseline; "y_hat" is the literal listing
    pto_sort_key: str = "q_hat"

    def __post_init__(self) -> None:
        if self.algo_type not in (OTPTO, PTO):
            raise ValueError(f"algo_type must be {OTPTO!r} or {PTO!r}, got {self.algo_type!r}")
        if self.pto_sort_key not in ("q_hat", "y_hat"):
            raise ValueError("pto_sort_key must be 'q_hat' or 'y_hat'")


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def _ranked(rows: list[tuple], key_pos: int) -> list[tuple]:
    # descending by the key, ties by ascending SKU id
    return sorted(rows, key=lambda r: (-r[key_pos], r[0]))


def greedy_scale(ordered: list[tuple[str, float]], N: int, B: int) -> tuple[dict[str, int], float]:
    """Scale provisional quantities to fill N and admit in order until the first overflow."""
    total = sum(q for _, q in ordered)
    if not ordered or total <= 0:
        return {}, 0.0
    alpha = N / total
    plan: dict[str, int] = {}
    used = 0
    for sku, q in ordered:
        scaled = max(B, round_half_away(q * alpha))
        if used + scaled > N:
            break
        plan[sku] = scaled
        used += scaled
    return plan, alpha


def postprocess_plan(bundle, cfg: PostprocessConfig, day: date | None = None) -> StockPlan:
    """Stock plan for one day from predictions with columns ``sku_id, y_hat, x_hat, q_hat``."""
    frame = bundle.frame if hasattr(bundle, "frame") else bundle
    if day is None:
        days = set(frame["date"]) if "date" in frame.columns and len(frame) else set()
        if len(days) > 1:
            raise ValueError("bundle spans several days; pass day=")
        day = next(iter(days)) if days else date.min
    elif "date" in frame.columns:
        frame = frame[frame["date"] == day]
    w = cfg.warehouse
    rows = list(zip(frame["sku_id"], frame["y_hat"].astype(float), frame["x_hat"].astype(float),
                    frame["q_hat"].astype(float)))
    if not rows or w.N < w.B:
        return StockPlan(day, {})

    if cfg.algo_type == OTPTO:
        chosen = _ranked(rows, 1)[:w.K]
        chosen = _ranked(chosen, 2)
        ordered = [(s, max(w.B, min(x, q))) for s, _, x, q in chosen]
    else:
        key = 3 if cfg.pto_sort_key == "q_hat" else 1
        chosen = _ranked(rows, key)[:w.K]
        ordered = [(s, max(w.B, q)) for s, _, _, q in chosen]
    entries, alpha = greedy_scale(ordered, w.N, w.B)
    log.debug("%s %s: alpha=%.4f admitted=%d of %d", cfg.algo_type, day, alpha, len(entries), len(ordered))
    return StockPlan.feasible(day, entries, w)


def postprocess_all(bundle, cfg: PostprocessConfig) -> list[StockPlan]:
    frame = bundle.frame if hasattr(bundle, "frame") else bundle
    return [postprocess_plan(frame, cfg, d) for d in sorted(set(frame["date"]))]
