from datetime import date, timedelta

import numpy as np
import pandas as pd
import pytest

from otpto.core import OrderLine, ValidationError, validate_and_index
from otpto.features import FAMILIES, FeatureConfig, FeatureMatrix, build_feature_matrix, pm0_forecast
from otpto.labeling import LABEL_COLUMNS, LabelSet

MONDAY = date(2024, 1, 1)


def series_history(sales_by_sku: dict[str, list[int]], start=MONDAY, price=2.0):
    """One single-line order per (day, SKU) with the given daily units."""
    lines = []
    for sku, series in sales_by_sku.items():
        for t, q in enumerate(series):
            if q > 0:
                lines.append(OrderLine(start + timedelta(days=t), f"{sku}-{t}", sku, int(q), price))
    return validate_and_index(lines)


def labels_from(history, stock: dict[tuple[date, str], float]):
    rows = []
    for day in history.days:
        for sku in sorted(day.demand):
            x = float(stock.get((day.day, sku), 0.0))
            y = int(x > 0)
            rows.append({"date": day.day, "sku_id": sku, "x_star": x, "y_star": y, "y_cs": y, "y_ts": y, "y_final": y})
    return LabelSet(pd.DataFrame(rows, columns=LABEL_COLUMNS))


def mixed_history(days=21, seed=0):
    rng = np.random.default_rng(seed)
    lines = []
    for t in range(days):
        when = MONDAY + timedelta(days=t)
        for o in range(int(rng.integers(3, 9))):
            for s in rng.choice(6, size=int(rng.integers(1, 4)), replace=False):
                lines.append(OrderLine(when, f"o{t}-{o}", f"s{s}", int(rng.integers(1, 4)), float(s + 1)))
    return validate_and_index(lines)


def random_labels(history, seed=0):
    rng = np.random.default_rng(seed)
    return labels_from(history, {(d.day, s): float(rng.integers(2, 8))
                                 for d in history.days for s in d.demand if rng.uniform() < 0.5})


# ---------------------------------------------------------------------------
# PM0
# ---------------------------------------------------------------------------

def test_pm0_constant_series():
    h = series_history({"A": [5] * 28})
    out = pm0_forecast(h, [MONDAY + timedelta(days=28)])
    row = out.iloc[0]
    assert row["q_hat"] == pytest.approx(5.0)
    assert row["residual_std"] == pytest.approx(0.0, abs=1e-12)


def test_pm0_weekly_pattern_direct_evaluation():
    sales = [10 if t % 7 == 0 else 2 for t in range(28)]
    h = series_history({"A": sales})
    target = MONDAY + timedelta(days=28)
    q = pm0_forecast(h, [target]).iloc[0]["q_hat"]
    w = 0.5 ** (np.arange(7) / 3.0)
    last7 = np.array(sales[-7:][::-1], dtype=float)  # age 0 first
    expected = 0.5 * np.mean([sales[28 - 7 * k] for k in range(1, 5)]) + 0.5 * (w @ last7) / w.sum()
    assert q == pytest.approx(expected, abs=1e-9)
    # the blend's EWMA half pulls a Monday spike well below 10 (about 6.26)
    assert q == pytest.approx(6.26, abs=0.01)


def test_pm0_unseen_sku_and_short_history():
    h = series_history({"A": [3, 5]})
    out = pm0_forecast(h, [MONDAY + timedelta(days=2)], skus=["A", "Z"]).set_index("sku_id")
    assert out.loc["A", "q_hat"] == pytest.approx(4.0)
    assert out.loc["Z"].tolist()[1:] == [0.0, 0.0, 0.0]


def test_pm0_reads_nothing_after_cutoff():
    base = [4, 6, 5, 7, 3, 8, 6, 5, 4, 6, 7, 5, 6, 4]
    target = MONDAY + timedelta(days=20)
    cut = MONDAY + timedelta(days=9)
    a = pm0_forecast(series_history({"A": base}), [target], cutoff=cut)
    b = pm0_forecast(series_history({"A": base[:10] + [99, 0, 50, 1]}), [target], cutoff=cut)
    assert a.equals(b)


# ---------------------------------------------------------------------------
# feature matrix
# ---------------------------------------------------------------------------

def test_common_only_schema():
    h = mixed_history()
    cfg = FeatureConfig(enabled_families=frozenset())
    m = build_feature_matrix(h, random_labels(h), cfg, h.days[0].day, h.days[-1].day, [h.days[-1].day])
    assert set(m.families.values()) == {"common"}
    assert all(c.startswith("com_") for c in m.columns)


def test_stock_share_direct_count():
    h = series_history({"A": [1] * 6 + [0] * 2})
    stocked = {(MONDAY + timedelta(days=t), "A"): 5.0 for t in (0, 2, 4)}
    m = build_feature_matrix(h, labels_from(h, stocked), FeatureConfig(), MONDAY, MONDAY + timedelta(days=6),
                             [MONDAY + timedelta(days=7)])
    row = m.frame.iloc[0]
    assert row["dec_stock_share"] == 0.5
    assert row["dec_stock_days"] == 3
    assert row["dec_x_max"] == 5.0


def test_cluster_onehot_has_rho_columns():
    h = mixed_history()
    m = build_feature_matrix(h, random_labels(h), FeatureConfig(rho=4), h.days[0].day, h.days[-1].day,
                             [d.day for d in h.days[5:]])
    clu = m.frame[[f"clu_{k}" for k in range(4)]].to_numpy()
    assert clu.shape[1] == 4
    assert (clu.sum(axis=1) == 1).all()


def test_single_line_orders_give_unit_sku_count():
    lines = []
    for t in range(5):
        when = MONDAY + timedelta(days=t)
        lines += [OrderLine(when, f"a{t}", "A", 2, 1.0),
                  OrderLine(when, f"b{t}", "B", 1, 1.0), OrderLine(when, f"b{t}", "C", 1, 1.0)]
    h = validate_and_index(lines)
    m = build_feature_matrix(h, random_labels(h), FeatureConfig(), MONDAY, MONDAY + timedelta(days=3),
                             [MONDAY + timedelta(days=4)])
    row = m.frame.set_index("sku_id")
    assert row.loc["A", "cross_order_skus_mean"] == 1.0
    assert row.loc["B", "cross_order_skus_mean"] == 2.0
    assert row.loc["A", "cross_order_count"] == 4


def test_no_leakage_from_target_day_onward():
    h = mixed_history(days=21, seed=1)
    labels = random_labels(h, seed=1)
    start, end = h.days[0].day, h.days[-1].day
    cfg = FeatureConfig(seed=3)
    skus = h.skus
    for t in (h.days[0].day, h.days[6].day, h.days[15].day):
        full = build_feature_matrix(h, labels, cfg, start, end, [t], skus)
        cut_h = validate_and_index([ln for d in h.days if d.day < t for ln in d.to_order_lines()])
        cut_l = LabelSet(labels.frame[labels.frame["date"] < t])
        cut = build_feature_matrix(cut_h, cut_l, cfg, start, end, [t], skus)
        pd.testing.assert_frame_equal(full.frame, cut.frame)


def test_schema_determinism_and_csv(tmp_path):
    h = mixed_history()
    labels = random_labels(h)
    args = (h, labels, FeatureConfig(), h.days[0].day, h.days[13].day, [d.day for d in h.days[10:]])
    a, b = build_feature_matrix(*args), build_feature_matrix(*args)
    a.to_csv(tmp_path / "a.csv", tmp_path / "m.json")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    back = FeatureMatrix.from_csv(tmp_path / "a.csv", tmp_path / "m.json")
    assert back.columns == a.columns
    assert np.allclose(back.values(), a.values())


def test_disabled_family_drops_its_columns():
    h = mixed_history()
    full = FeatureConfig()
    for fam in FAMILIES[:-1]:
        m = build_feature_matrix(h, random_labels(h), full.without(fam), h.days[0].day, h.days[-1].day,
                                 [h.days[-1].day])
        assert fam not in m.families.values()
    with pytest.raises(ValueError):
        full.without("common")


def test_config_and_window_validation():
    with pytest.raises(ValueError):
        FeatureConfig(rho=0)
    with pytest.raises(ValueError):
        FeatureConfig(enabled_families=frozenset({"weather"}))
    h = mixed_history()
    with pytest.raises(ValidationError):
        build_feature_matrix(h, random_labels(h), FeatureConfig(), h.days[5].day, h.days[2].day, [])
