"""Domain types, order-history indexing and the fulfillment replay simulator.

Every other module evaluates plans through :func:`simulate_day`, so the
coverage semantics live here: the line of order ``o`` for SKU ``i`` is
supplied by the warehouse iff the stocked quantity of ``i`` is at least the
cumulative demand for ``i`` over orders ``1..o`` of the day.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence


class ValidationError(ValueError):
    """Raised when raw order data or a plan violates its contract."""


class EmptyDayError(ValueError):
    """Raised when a fulfillment rate is requested for a day with no orders."""


@dataclass(frozen=True)
class OrderLine:
    day: date
    order_id: str
    sku_id: str
    quantity: int
    unit_price: float

    def __post_init__(self) -> None:
        if int(self.quantity) != self.quantity or self.quantity < 1:
            raise ValidationError(f"quantity must be a positive integer, got {self.quantity!r}")
        if not math.isfinite(self.unit_price) or self.unit_price < 0:
            raise ValidationError(f"unit_price must be >= 0, got {self.unit_price!r}")

    @property
    def price_cents(self) -> int:
        return int(round(self.unit_price * 100))


@dataclass(frozen=True)
class WarehouseConfig:
    """Daily capacity of a front-end warehouse.

    K caps the number of distinct SKUs, N the total units and B is the
    minimum quantity of any stocked SKU. T is the evaluation horizon in days.
    """

    K: int
    N: int
    B: int
    T: int = 7

    def __post_init__(self) -> None:
        for name in ("K", "N", "B", "T"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValidationError(f"{name} must be a positive integer, got {value!r}")
        if self.B > self.N:
            raise ValidationError(f"B ({self.B}) must not exceed N ({self.N})")


@dataclass(frozen=True)
class DayOrders:
    """One day of indexed orders, in arrival order.

    ``lines[o]`` holds ``(sku_id, quantity, cumulative, price_cents)`` for each
    line of order ``o``; ``cumulative`` is the running demand of that SKU over
    orders ``0..o`` of the day.
    """

    day: date
    order_ids: tuple[str, ...]
    lines: tuple[tuple[tuple[str, int, int, int], ...], ...]
    demand: Mapping[str, int]
    gmv_cents: tuple[int, ...]

    @property
    def n_orders(self) -> int:
        return len(self.order_ids)

    @property
    def n_skus(self) -> int:
        return len(self.demand)

    @property
    def skus(self) -> list[str]:
        return sorted(self.demand)

    @property
    def sizes(self) -> tuple[int, ...]:
        """Distinct SKU count of every order (all lines have distinct SKUs)."""
        return tuple(len(order) for order in self.lines)

    @property
    def gmv(self) -> tuple[float, ...]:
        return tuple(c / 100 for c in self.gmv_cents)

    def cumulative(self, o: int, sku: str) -> int:
        """Cumulative demand of ``sku`` over orders ``0..o`` (0 if never bought)."""
        total = 0
        for lines in self.lines[: o + 1]:
            for s, q, _, _ in lines:
                if s == sku:
                    total += q
        return total

    def to_order_lines(self) -> list[OrderLine]:
        out = []
        for oid, lines in zip(self.order_ids, self.lines):
            for sku, qty, _, cents in lines:
                out.append(OrderLine(self.day, oid, sku, qty, cents / 100))
        return out


@dataclass(frozen=True)
class IndexedHistory:
    """Validated order history, one :class:`DayOrders` per calendar day."""

    days: tuple[DayOrders, ...]

    def __post_init__(self) -> None:
        dates = [d.day for d in self.days]
        if dates != sorted(dates) or len(set(dates)) != len(dates):
            raise ValidationError("days must be unique and sorted")

    @property
    def dates(self) -> list[date]:
        return [d.day for d in self.days]

    def day(self, when: date) -> DayOrders:
        for d in self.days:
            if d.day == when:
                return d
        raise KeyError(when)

    def between(self, start: date, end: date) -> "IndexedHistory":
        """Days with ``start <= day <= end``."""
        return IndexedHistory(tuple(d for d in self.days if start <= d.day <= end))

    def before(self, when: date) -> "IndexedHistory":
        return IndexedHistory(tuple(d for d in self.days if d.day < when))

    @property
    def skus(self) -> list[str]:
        out: set[str] = set()
        for d in self.days:
            out.update(d.demand)
        return sorted(out)

    def to_order_lines(self) -> list[OrderLine]:
        return [line for d in self.days for line in d.to_order_lines()]


def validate_and_index(lines: Iterable[OrderLine]) -> IndexedHistory:
    """Group raw lines into days and orders and derive the per-order statistics.

    Orders within a day keep the row order in which they first appear, with
    ``order_id`` as the tie-break.
    """
    seen: set[tuple[date, str, str]] = set()
    by_day: dict[date, dict[str, list[OrderLine]]] = defaultdict(dict)
    first_row: dict[tuple[date, str], int] = {}
    for row, line in enumerate(lines):
        if not isinstance(line, OrderLine):
            raise ValidationError(f"row {row}: expected OrderLine, got {type(line).__name__}")
        key = (line.day, line.order_id, line.sku_id)
        if key in seen:
            raise ValidationError(
                f"row {row}: duplicate line (day={line.day}, order_id={line.order_id}, sku_id={line.sku_id})"
            )
        seen.add(key)
        first_row.setdefault((line.day, line.order_id), row)
        by_day[line.day].setdefault(line.order_id, []).append(line)

    days = []
    for when in sorted(by_day):
        orders = by_day[when]
        order_ids = sorted(orders, key=lambda oid: (first_row[(when, oid)], oid))
        running: dict[str, int] = defaultdict(int)
        all_lines = []
        gmv = []
        for oid in order_ids:
            entries = []
            cents = 0
            for line in orders[oid]:
                running[line.sku_id] += line.quantity
                entries.append((line.sku_id, line.quantity, running[line.sku_id], line.price_cents))
                cents += line.quantity * line.price_cents
            all_lines.append(tuple(entries))
            gmv.append(cents)
        days.append(DayOrders(when, tuple(order_ids), tuple(all_lines), dict(running), tuple(gmv)))
    return IndexedHistory(tuple(days))


@dataclass(frozen=True)
class StockPlan:
    """Stocked quantity per SKU for one day; absent SKUs are not stocked."""

    day: date
    entries: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        clean = {}
        for sku, qty in self.entries.items():
            if not math.isfinite(qty) or qty < 0:
                raise ValidationError(f"plan quantity for {sku} must be >= 0, got {qty!r}")
            if qty > 0:
                clean[sku] = qty
        object.__setattr__(self, "entries", dict(sorted(clean.items())))

    @classmethod
    def feasible(cls, day: date, entries: Mapping[str, float], config: WarehouseConfig) -> "StockPlan":
        """Build a plan and check it against the K/N/B capacity constraints."""
        plan = cls(day, entries)
        plan.check(config)
        return plan

    def check(self, config: WarehouseConfig) -> None:
        if len(self.entries) > config.K:
            raise ValidationError(f"{len(self.entries)} SKUs stocked, K={config.K}")
        if self.total > config.N + 1e-9:
            raise ValidationError(f"{self.total} units stocked, N={config.N}")
        low = [s for s, q in self.entries.items() if q < config.B]
        if low:
            raise ValidationError(f"SKUs below B={config.B}: {low[:5]}")

    def is_feasible(self, config: WarehouseConfig) -> bool:
        try:
            self.check(config)
        except ValidationError:
            return False
        return True

    @property
    def total(self) -> float:
        return float(sum(self.entries.values()))

    def quantity(self, sku: str) -> float:
        return self.entries.get(sku, 0.0)

    def summary(self) -> dict[str, float]:
        qty = sorted(self.entries.values())
        if not qty:
            return {"n_skus": 0, "total": 0.0, "min": 0.0, "max": 0.0, "mean": 0.0, "median": 0.0}
        mid = len(qty) // 2
        median = qty[mid] if len(qty) % 2 else (qty[mid - 1] + qty[mid]) / 2
        return {
            "n_skus": len(qty),
            "total": float(sum(qty)),
            "min": float(qty[0]),
            "max": float(qty[-1]),
            "mean": float(sum(qty) / len(qty)),
            "median": float(median),
        }


@dataclass(frozen=True)
class FulfillmentReport:
    day: date
    fulfilled: tuple[bool, ...]
    supplied: tuple[tuple[bool, ...], ...]
    fulfilled_count: int
    order_count: int
    fulfilled_gmv: float

    @property
    def rate(self) -> float:
        return self.fulfilled_count / self.order_count


def simulate_day(day: DayOrders, plan: StockPlan) -> FulfillmentReport:
    """Replay a day's orders against a stock plan."""
    if plan.day != day.day:
        raise ValidationError(f"plan is for {plan.day}, orders are for {day.day}")
    if day.n_orders == 0:
        raise EmptyDayError(f"no orders on {day.day}: fulfillment rate is undefined")
    stock = plan.entries
    supplied = []
    fulfilled = []
    gmv = 0
    for lines, cents in zip(day.lines, day.gmv_cents):
        z = tuple(stock.get(sku, 0.0) >= cum for sku, _, cum, _ in lines)
        supplied.append(z)
        ok = all(z)
        fulfilled.append(ok)
        if ok:
            gmv += cents
    return FulfillmentReport(
        day=day.day,
        fulfilled=tuple(fulfilled),
        supplied=tuple(supplied),
        fulfilled_count=sum(fulfilled),
        order_count=day.n_orders,
        fulfilled_gmv=gmv / 100,
    )


def average_rate(reports: Sequence[FulfillmentReport]) -> float:
    """Unweighted mean of the daily full-order fulfillment rates."""
    if not reports:
        raise ValueError("average_rate needs at least one report")
    return sum(r.rate for r in reports) / len(reports)


def order_weighted_rate(reports: Sequence[FulfillmentReport]) -> float:
    if not reports:
        raise ValueError("order_weighted_rate needs at least one report")
    return sum(r.fulfilled_count for r in reports) / sum(r.order_count for r in reports)


ORDERS_HEADER = ["date", "order_id", "sku_id", "quantity", "unit_price"]
PLAN_HEADER = ["date", "sku_id", "quantity"]


def read_orders_csv(path: str | Path) -> list[OrderLine]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ORDERS_HEADER:
            raise ValidationError(f"orders CSV header must be {','.join(ORDERS_HEADER)}, got {reader.fieldnames}")
        for row_no, row in enumerate(reader, start=2):
            try:
                qty = float(row["quantity"])
                if qty != int(qty):
                    raise ValidationError("quantity must be integral")
                out.append(
                    OrderLine(
                        day=date.fromisoformat(row["date"]),
                        order_id=row["order_id"],
                        sku_id=row["sku_id"],
                        quantity=int(qty),
                        unit_price=float(row["unit_price"]),
                    )
                )
            except (ValueError, TypeError) as exc:
                raise ValidationError(f"line {row_no}: {exc}") from exc
    return out


def write_orders_csv(path: str | Path, lines: Iterable[OrderLine]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ORDERS_HEADER)
        for line in lines:
            writer.writerow([line.day.isoformat(), line.order_id, line.sku_id, line.quantity, f"{line.unit_price:.2f}"])


def _fmt_qty(q: float) -> str:
    return str(int(q)) if float(q).is_integer() else repr(float(q))


def write_plans_csv(path: str | Path, plans: Iterable[StockPlan]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PLAN_HEADER)
        for plan in plans:
            for sku, qty in plan.entries.items():
                writer.writerow([plan.day.isoformat(), sku, _fmt_qty(qty)])


def read_plans_csv(path: str | Path) -> dict[date, StockPlan]:
    entries: dict[date, dict[str, float]] = defaultdict(dict)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PLAN_HEADER:
            raise ValidationError(f"plan CSV header must be {','.join(PLAN_HEADER)}, got {reader.fieldnames}")
        for row in reader:
            entries[date.fromisoformat(row["date"])][row["sku_id"]] = float(row["quantity"])
    return {d: StockPlan(d, e) for d, e in sorted(entries.items())}
