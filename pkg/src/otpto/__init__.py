"""Joint SKU selection and stock sizing for capacity-limited front-end warehouses."""

from otpto.core import (
    DayOrders,
    EmptyDayError,
    FulfillmentReport,
    IndexedHistory,
    OrderLine,
    StockPlan,
    ValidationError,
    WarehouseConfig,
    average_rate,
    simulate_day,
    validate_and_index,
)
from otpto.om1 import SolverConfig, SolveOutcome, brute_force_oracle, solve_exact

__version__ = "0.1.0"

__all__ = [
    "DayOrders",
    "EmptyDayError",
    "FulfillmentReport",
    "IndexedHistory",
    "OrderLine",
    "SolveOutcome",
    "SolverConfig",
    "StockPlan",
    "ValidationError",
    "WarehouseConfig",
    "average_rate",
    "brute_force_oracle",
    "simulate_day",
    "solve_exact",
    "validate_and_index",
]
