import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otpto.mlcore import (
    GbdtModel,
    GbdtParams,
    eval_metric,
    kmeans,
    min_max_normalize,
    predict_gbdt,
    predict_raw,
    train_gbdt,
)
from otpto.predict import PM1_PARAMS, PM2_PARAMS


def pair_auc(y, s):
    pos = [b for a, b in zip(y, s) if a == 1]
    neg = [b for a, b in zip(y, s) if a == 0]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    y = (x[:, 0] + 2 * x[:, 1] > 0).astype(float)
    return x, y


# ---------------------------------------------------------------------------
# normalization and clustering
# ---------------------------------------------------------------------------

def test_min_max_examples():
    out = min_max_normalize(np.array([[2.0, 5.0], [4.0, 5.0], [6.0, 5.0]]))
    assert out[:, 0].tolist() == [0.0, 0.5, 1.0]
    assert out[:, 1].tolist() == [0.0, 0.0, 0.0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_min_max_properties(seed):
    m = np.random.default_rng(seed).normal(size=(15, 3)) * 10
    out = min_max_normalize(m)
    assert out.min() >= 0 and out.max() <= 1
    for j in range(3):
        assert (np.argsort(out[:, j], kind="stable") == np.argsort(m[:, j], kind="stable")).all()
    assert np.allclose(min_max_normalize(out), out)


def test_min_max_rejects_nan():
    with pytest.raises(ValueError):
        min_max_normalize(np.array([[np.nan]]))


def test_kmeans_k1_is_column_means():
    pts = np.random.default_rng(1).normal(size=(20, 2))
    assign, centers, _ = kmeans(pts, 1)
    assert (assign == 0).all()
    assert np.allclose(centers[0], pts.mean(axis=0))


def test_kmeans_k_equals_n_has_zero_inertia():
    pts = np.random.default_rng(2).normal(size=(8, 2))
    assign, _, inertia = kmeans(pts, 8)
    assert inertia == pytest.approx(0.0, abs=1e-12)
    assert len(set(assign.tolist())) == 8


def test_kmeans_effective_k_limited_by_distinct_rows():
    pts = np.array([[0.0, 0.0]] * 5 + [[1.0, 1.0]] * 5)
    assign, centers, inertia = kmeans(pts, 4)
    assert len(centers) == 2 and inertia == 0.0
    assert len(set(assign[:5])) == 1 and len(set(assign[5:])) == 1


def _sse(pts, labels):
    return sum(((pts[labels == c] - pts[labels == c].mean(axis=0)) ** 2).sum() for c in set(labels.tolist()))


def test_kmeans_blobs_match_exhaustive_partition_oracle():
    rng = np.random.default_rng(3)
    pts = np.vstack([rng.normal(0, 1, size=(6, 2)), rng.normal(10, 1, size=(6, 2))])
    assign, _, inertia = kmeans(pts, 2, seed=4)
    assert len(set(assign[:6])) == 1 and len(set(assign[6:])) == 1 and assign[0] != assign[6]
    best = min(_sse(pts, np.array((0,) + bits))
               for bits in itertools.product((0, 1), repeat=11) if sum(bits) > 0)
    assert inertia <= best + 1e-9


def test_kmeans_inertia_non_increasing_and_deterministic():
    pts = np.random.default_rng(5).normal(size=(60, 2))
    a1, c1, i1, hist = kmeans(pts, 4, seed=9, return_history=True)
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))
    a2, c2, i2 = kmeans(pts, 4, seed=9)
    assert (a1 == a2).all() and np.array_equal(c1, c2) and i1 == i2


def test_kmeans_permutation_keeps_well_separated_solution():
    rng = np.random.default_rng(6)
    pts = np.vstack([rng.normal(c, 0.1, size=(10, 2)) for c in (0, 5, 10)])
    perm = rng.permutation(len(pts))
    _, _, i1 = kmeans(pts, 3, seed=0)
    _, _, i2 = kmeans(pts[perm], 3, seed=0)
    assert i1 == pytest.approx(i2)


def test_kmeans_errors():
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), 0)
    with pytest.raises(ValueError):
        kmeans(np.array([[np.inf, 0.0]]), 1)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def test_metric_examples():
    assert eval_metric("auc", [0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]) == 1.0
    assert eval_metric("rmse", [1.0, 2.0], [1.0, 2.0]) == 0.0
    with pytest.raises(ValueError):
        eval_metric("auc", [1, 1], [0.1, 0.2])
    with pytest.raises(ValueError):
        eval_metric("auc", [0, 1], [0.1])


def test_auc_matches_pair_oracle():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        y = rng.integers(0, 2, size=50)
        y[:2] = [0, 1]
        s = rng.integers(0, 10, size=50) / 10  # many ties
        assert abs(eval_metric("auc", y, s) - pair_auc(y, s)) <= 1e-12


def test_auc_invariant_to_monotone_transform():
    rng = np.random.default_rng(1)
    y = rng.integers(0, 2, size=40)
    y[:2] = [0, 1]
    s = rng.normal(size=40)
    assert eval_metric("auc", y, s) == eval_metric("auc", y, np.exp(3 * s) + 1)


# ---------------------------------------------------------------------------
# boosting
# ---------------------------------------------------------------------------

def test_separable_training_auc():
    x, y = separable()
    model = train_gbdt(x, y, params=PM1_PARAMS)
    p = predict_gbdt(model, x)
    assert eval_metric("auc", y, p) >= 0.99
    assert ((p > 0) & (p < 1)).all()


def test_noiseless_regression_rmse():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(300, 2))
    y = 3 * x[:, 0] - 2 * x[:, 1] ** 2
    model = train_gbdt(x, y, params=PM2_PARAMS)
    assert eval_metric("rmse", y, predict_gbdt(model, x)) <= 0.05 * y.std()


def test_constant_target_needs_no_trees():
    x = np.random.default_rng(0).normal(size=(10, 2))
    model = train_gbdt(x, np.full(10, 4.5), params=GbdtParams(objective="regression", metric="rmse"))
    assert model.trees == [] and model.base_score == 4.5
    assert (predict_gbdt(model, x) == 4.5).all()


def test_zero_tree_binary_prediction_is_linked_base():
    model = GbdtModel(trees=[], base_score=0.0, objective="binary", best_iteration=0, n_features=1)
    assert (predict_gbdt(model, np.zeros((3, 1))) == 0.5).all()


def test_default_params_respect_depth_and_leaves():
    x, y = separable(seed=2)
    model = train_gbdt(x, y, params=PM1_PARAMS)
    for t in model.trees:
        assert t.max_depth <= 5 and t.n_leaves <= 31
    r = train_gbdt(x, x[:, 0] * 4, params=PM2_PARAMS)
    assert all(t.max_depth <= 5 for t in r.trees)


def test_training_loss_monotone_without_sampling():
    x, y = separable(seed=3)
    p = GbdtParams(learning_rate=0.05, n_estimators=60, subsample=1.0, colsample_bytree=1.0)
    hist = train_gbdt(x, y, params=p).train_history
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))


def test_early_stopping_sets_best_iteration():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(300, 3))
    y = (rng.uniform(size=300) < 0.5).astype(float)  # pure noise: validation stalls
    p = GbdtParams(n_estimators=400, early_stopping_rounds=10)
    model = train_gbdt(x[:200], y[:200], x[200:], y[200:], params=p)
    assert len(model.trees) < 400
    assert 1 <= model.best_iteration <= len(model.trees)
    assert len(model.trees) - model.best_iteration == 10


def test_single_class_is_flagged_degenerate():
    x = np.random.default_rng(0).normal(size=(20, 2))
    model = train_gbdt(x, np.ones(20), params=GbdtParams(n_estimators=5))
    assert model.degenerate
    assert ((predict_gbdt(model, x) > 0) & (predict_gbdt(model, x) < 1)).all()


def test_deterministic_and_json_round_trip():
    x, y = separable(seed=5)
    p = GbdtParams(n_estimators=30, seed=11)
    a = train_gbdt(x, y, params=p)
    b = train_gbdt(x, y, params=p)
    assert a.to_json() == b.to_json()
    c = GbdtModel.from_json(a.to_json())
    assert np.array_equal(predict_raw(a, x), predict_raw(c, x))
    with pytest.raises(ValueError):
        GbdtModel.from_json(a.to_json().replace('"format_version":1', '"format_version":9'))


def test_regularisation_shrinks_leaves():
    x, y = separable(seed=6)
    plain = train_gbdt(x, y, params=GbdtParams(n_estimators=1, subsample=1.0, colsample_bytree=1.0))
    reg = train_gbdt(x, y, params=GbdtParams(n_estimators=1, subsample=1.0, colsample_bytree=1.0,
                                             reg_alpha=5.0, reg_lambda=5.0))
    assert max(map(abs, reg.trees[0].value)) < max(map(abs, plain.trees[0].value))


def test_feature_count_mismatch():
    x, y = separable()
    model = train_gbdt(x, y, params=GbdtParams(n_estimators=3))
    with pytest.raises(ValueError):
        predict_gbdt(model, np.zeros((2, 3)))


def test_param_validation():
    for bad in ({"num_leaves": 1}, {"max_depth": 0}, {"n_estimators": 0}, {"subsample": 0.0},
                {"reg_alpha": -1.0}, {"objective": "poisson"}):
        with pytest.raises(ValueError):
            GbdtParams(**bad)
