from __future__ import annotations

import sys
from datetime import date

import numpy as np
import pytest

from otpto.core import OrderLine, validate_and_index

DAY = date(2024, 3, 4)


def make_day(orders, prices=None, when: date = DAY):
    """Index a single day from ``[{sku: qty, ...}, ...]`` in arrival order."""
    prices = prices or {}
    lines = []
    for k, order in enumerate(orders):
        for sku, qty in order.items():
            lines.append(OrderLine(when, f"o{k:03d}", sku, qty, prices.get(sku, 1.0)))
    return validate_and_index(lines).days[0]


def random_day(rng: np.random.Generator, max_skus: int = 6, max_orders: int = 12, max_basket: int = 3):
    m = int(rng.integers(1, max_skus + 1))
    n = int(rng.integers(1, max_orders + 1))
    lines = []
    for o in range(n):
        k = int(rng.integers(1, min(m, max_basket) + 1))
        for s in rng.choice(m, size=k, replace=False):
            lines.append(OrderLine(DAY, f"o{o:03d}", f"s{int(s)}", int(rng.integers(1, 4)),
                                   float(rng.integers(1, 2000)) / 100))
    return validate_and_index(lines).days[0]


@pytest.fixture
def three_orders():
    return make_day([{"A": 2}, {"A": 3, "B": 1}, {"B": 2}])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None:
        return
    terminalreporter.section("acceptance")
    for n in range(1, 10):
        terminalreporter.write_line(mod.RESULTS.get(n, f"criterion {n}: NOT RUN (deselected or errored before a verdict)"))
