import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from animaltwin.errors import (
    AllRowsIncomplete,
    CorruptArtifact,
    InsufficientRows,
    InvalidSpec,
    LengthMismatch,
    MissingFeatureColumn,
    ModelTableSchemaMismatch,
    NoComparablePairs,
    UnsupportedSchemaVersion,
)
from animaltwin.model import (
    LinearRegression,
    ModelArtifact,
    ModelSpec,
    Predictions,
    RandomForestRegressor,
    best_split,
    evaluate,
    fit_forest,
    fit_linear,
    load_model,
    predict,
    save_model,
)
from animaltwin.model.forest import tree_seed
from animaltwin.timeseries import TimeGrid, TimeTable

from oracles import naive_metrics, normal_equations


def table(units=None, **columns):
    n = len(next(iter(columns.values())))
    return TimeTable.from_grid(TimeGrid(0, 1000, n), columns, units=units)


def linear(features=("x",), **kw):
    return ModelSpec("linear", "y", features, **kw)


def forest(features=("x",), **kw):
    return ModelSpec("random_forest", "y", features, **kw)


# -- linear ---------------------------------------------------------------


def test_exact_line():
    art = fit_linear(table(x=[1.0, 2.0, 3.0], y=[2.0, 4.0, 6.0]), linear())
    assert art.payload["intercept"] == pytest.approx(0.0, abs=1e-9)
    assert art.payload["coefficients"]["x"] == pytest.approx(2.0, abs=1e-9)


def test_constant_target():
    rng = np.random.default_rng(1)
    art = fit_linear(table(a=rng.normal(size=8), b=rng.normal(size=8), y=np.full(8, 5.0)), linear(("a", "b")))
    assert art.payload["intercept"] == pytest.approx(5.0, abs=1e-9)
    assert all(abs(c) < 1e-9 for c in art.payload["coefficients"].values())


def test_planted_zero_noise_recovery():
    rng = np.random.default_rng(2)
    hf, odba = rng.uniform(20, 80, 50), rng.uniform(0, 2, 50)
    y = 1.5 * hf + 0.2 * odba - 3
    art = fit_linear(table(hf=hf, odba=odba, y=y), linear(("hf", "odba")))
    got = [art.payload["intercept"], art.payload["coefficients"]["hf"], art.payload["coefficients"]["odba"]]
    assert np.allclose(got, [-3, 1.5, 0.2], rtol=1e-6, atol=0)
    # Independent oracle: a 3-row subcase solved through the normal equations.
    beta = normal_equations(np.column_stack([hf[:3], odba[:3]]), y[:3])
    assert np.allclose(beta, [-3, 1.5, 0.2], rtol=1e-6)


def test_incomplete_rows_are_excluded_and_counted():
    art = fit_linear(table(x=[1.0, 2.0, np.nan, 4.0], y=[1.0, 2.0, 3.0, np.nan]), linear())
    assert art.metadata["n_excluded"] == 2 and art.metadata["n_train"] == 2
    with pytest.raises(AllRowsIncomplete):
        fit_linear(table(x=[np.nan, 1.0], y=[1.0, np.nan]), linear())
    with pytest.raises(InsufficientRows):
        fit_linear(table(a=[1.0, 2.0], b=[3.0, 1.0], y=[1.0, 2.0]), linear(("a", "b")))


def test_ridge_only_when_rank_deficient():
    x = np.arange(10.0)
    full = fit_linear(table(x=x, y=3 * x), linear())
    assert full.metadata["ridge_applied"] is False
    dup = fit_linear(table(a=x, b=2 * x, y=3 * x), linear(("a", "b")))
    assert dup.metadata["ridge_applied"] is True
    p = predict(dup, table(a=x, b=2 * x))[0]
    assert np.allclose(p, 3 * x, atol=1e-6)


@settings(max_examples=40)
@given(st.integers(4, 40), st.integers(1, 3), st.integers(0, 10_000))
def test_residuals_orthogonal_to_features(n, p, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p)) * rng.uniform(0.1, 100, p)
    y = X @ rng.normal(size=p) + rng.normal(size=n)
    est = LinearRegression().fit(X, y)
    r = y - est.predict(X)
    scale = n * np.std(y) + 1e-300
    assert abs(r.sum()) < 1e-6 * scale
    for j in range(p):
        assert abs(r @ X[:, j]) < 1e-6 * scale * np.abs(X[:, j]).max()


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_noiseless_recovery(seed, p):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-10, 10, size=(30, p))
    coef = rng.uniform(0.5, 5, p) * rng.choice([-1, 1], p)
    est = LinearRegression().fit(X, 7.0 + X @ coef)
    assert np.allclose(est.coef_, coef, rtol=1e-6, atol=0)


def test_estimators_follow_sklearn_conventions():
    for est in (LinearRegression(ridge_epsilon=1e-6), RandomForestRegressor(n_trees=3, seed=9)):
        twin = clone(est)
        assert twin.get_params() == est.get_params() and not hasattr(twin, "n_features_in_")
    X = np.arange(20.0).reshape(-1, 1)
    assert RandomForestRegressor(n_trees=5, min_samples_leaf=2).fit(X, X[:, 0]).score(X, X[:, 0]) > 0.9


# -- forest ---------------------------------------------------------------


def test_depth_zero_is_training_mean():
    y = np.array([1.0, 2.0, 4.0, 9.0])
    art = fit_forest(table(x=np.arange(4.0), y=y), forest(n_trees=1, max_depth=0, min_samples_leaf=1))
    tree = art.payload["trees"][0]
    assert len(tree["value"]) == 1
    # the single leaf holds the mean of the tree's bootstrap sample
    est = art.estimator()
    assert np.all(predict(art, table(x=[-5.0, 0.5, 100.0]))[0] == est.trees_[0].value[0])


def test_depth_zero_single_tree_without_resampling():
    est = RandomForestRegressor(n_trees=1, max_depth=0, min_samples_leaf=1).fit(np.zeros((3, 1)), [3.0, 3.0, 3.0])
    assert est.predict(np.array([[7.0]])).tolist() == [3.0]


def test_step_function_is_learnt_exactly():
    # Features sit in [-2, -1] and [1, 2]: every admissible threshold a
    # bootstrap sample can produce lies in the gap, so no row is misrouted.
    x = np.r_[np.linspace(-2, -1, 50), np.linspace(1, 2, 50)]
    y = (x > 0).astype(float)
    art = fit_forest(table(x=x, y=y), forest(n_trees=25, max_depth=2, min_samples_leaf=1, mtry=1, seed=4))
    pred = predict(art, table(x=x))[0]
    assert np.array_equal(pred, y)


def test_best_split_matches_exhaustive_enumeration():
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rng.integers(0, 8, 30).astype(float)
        y = rng.normal(size=30)
        got = best_split(x, y, 2)
        best = None
        for thr in sorted({(a + b) / 2 for a in set(x) for b in set(x) if a < b and not ((x > a) & (x < b)).any()}):
            left, right = y[x <= thr], y[x > thr]
            if left.size < 2 or right.size < 2:
                continue
            sse = ((left - left.mean()) ** 2).sum() + ((right - right.mean()) ** 2).sum()
            if best is None or sse < best[0] - 1e-12:
                best = (sse, thr)
        assert got[1] == best[1] and got[0] == pytest.approx(best[0], rel=1e-9, abs=1e-9)


def test_identical_single_leaf_trees():
    est = RandomForestRegressor(n_trees=7, max_depth=0, min_samples_leaf=1).fit(np.arange(6.0).reshape(-1, 1), np.full(6, 4.2))
    assert est.predict(np.array([[-1e9], [0.0], [1e9]])).tolist() == [4.2, 4.2, 4.2]


def test_same_seed_same_hash():
    rng = np.random.default_rng(0)
    t = table(a=rng.normal(size=40), b=rng.normal(size=40), y=rng.normal(size=40))
    spec = forest(("a", "b"), n_trees=10, seed=17, min_samples_leaf=2)
    assert fit_forest(t, spec).content_hash == fit_forest(t, spec).content_hash
    assert fit_forest(t, spec).content_hash != fit_forest(t, spec.with_seed(18)).content_hash


def test_tree_seed_rule():
    assert tree_seed(1, 0) == 1 and tree_seed(1, 1) == 0 and tree_seed(2**64 - 1, 5) == 2**64 - 6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.sampled_from([None, 0, 1, 3]))
def test_forest_predictions_stay_in_training_range(seed, leaf, depth):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 2))
    y = rng.normal(size=30) * 100
    est = RandomForestRegressor(n_trees=5, min_samples_leaf=leaf, max_depth=depth, seed=seed).fit(X, y)
    p = est.predict(rng.normal(size=(50, 2)) * 10)
    assert np.all(p >= y.min()) and np.all(p <= y.max())


def test_forest_thread_count_is_invisible():
    rng = np.random.default_rng(3)
    t = table(a=rng.normal(size=60), b=rng.normal(size=60), y=rng.normal(size=60))
    spec = forest(("a", "b"), n_trees=12, seed=5)
    assert fit_forest(t, spec, n_jobs=1).content_hash == fit_forest(t, spec, n_jobs=4).content_hash


def test_forest_needs_enough_rows():
    with pytest.raises(InsufficientRows):
        fit_forest(table(x=np.arange(9.0), y=np.arange(9.0)), forest(min_samples_leaf=5))


def test_more_trees_do_not_hurt(scenario):
    from animaltwin.ingest import MergeSpec, merge_sources
    from animaltwin.split import SplitSpec, split

    votes = 0
    for seed in range(1, 6):
        d = scenario("pig", seed=seed)
        t, _ = merge_sources(MergeSpec.load(d / "merge.json"))
        train, test = split(t, SplitSpec("chamber.heat_production"))
        spec = ModelSpec.load(d / "model_forest.json")
        rmse = [
            evaluate(predict(fit_forest(train, replace(spec, n_trees=k)), test)[0],
                     test["chamber.heat_production"]).rmse
            for k in (1, 100)
        ]
        votes += rmse[1] <= rmse[0]
    assert votes >= 3


# -- spec validation ------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [
        {"features": ()},
        {"features": ("y",)},
        {"features": ("x", "x")},
        {"n_trees": 0},
        {"min_samples_leaf": 0},
        {"mtry": 2},
        {"seed": -1},
        {"kind": "svm"},
    ],
)
def test_spec_invariants(kw):
    args = {"kind": "random_forest", "target": "y", "features": ("x",), **kw}
    with pytest.raises(InvalidSpec):
        ModelSpec(**args)


def test_spec_defaults_from_json():
    spec = ModelSpec.from_dict({"kind": "random_forest", "target": "y", "features": ["a", "b", "c", "d"]})
    assert (spec.n_trees, spec.max_depth, spec.min_samples_leaf, spec.ridge_epsilon) == (100, None, 5, 1e-8)
    assert RandomForestRegressor()._check_params(4) == 2


# -- predict --------------------------------------------------------------


def test_linear_prediction_and_usable_flags():
    art = fit_linear(table(x=[1.0, 2.0, 3.0], y=[2.0, 4.0, 6.0]), linear())
    values, usable = predict(art, table(x=[3.0, np.nan]))
    assert values[0] == pytest.approx(6.0) and np.isnan(values[1])
    assert usable.tolist() == [True, False]


def test_prediction_errors():
    art = fit_linear(table(units={"x": "W"}, x=[1.0, 2.0, 3.0], y=[2.0, 4.0, 6.0]), linear())
    with pytest.raises(MissingFeatureColumn):
        predict(art, table(z=[1.0]))
    with pytest.raises(ModelTableSchemaMismatch):
        predict(art, table(units={"x": "kW"}, x=[1.0]))
    assert predict(art, table(x=[1.0]))[1].tolist() == [True]


# -- metrics --------------------------------------------------------------


def test_metric_examples():
    m = evaluate([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert (m.rmse, m.mae, m.r2) == (0.0, 0.0, 1.0)
    act = np.array([1.0, 4.0, 7.0])
    assert evaluate(np.full(3, act.mean()), act).r2 == 0.0
    m = evaluate([1.0, 2.0], [2.0, 4.0])
    assert m.mae == 1.5 and m.rmse == pytest.approx(math.sqrt(2.5), abs=1e-12)
    assert m.rmse == pytest.approx(1.5811, abs=1e-4)


def test_metric_missing_handling_and_errors():
    m = evaluate([1.0, np.nan, 3.0], [1.0, 2.0, np.nan])
    assert m.n == 1
    flat = evaluate([5.0, 6.0], [5.0, 5.0])
    assert flat.r2 is None and flat.note
    assert evaluate([5.0, 5.0], [5.0, 5.0]).r2 == 1.0
    with pytest.raises(LengthMismatch):
        evaluate([1.0], [1.0, 2.0])
    with pytest.raises(NoComparablePairs):
        evaluate([np.nan], [1.0])


@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)), min_size=1, max_size=50))
def test_metric_invariants(pairs):
    pred, act = map(list, zip(*pairs))
    m = evaluate(pred, act)
    assert m.rmse >= 0 and m.mae >= 0 and m.mae <= m.rmse and m.n == len(pairs)
    assert m.r2 is None or m.r2 <= 1
    rmse, mae, _ = naive_metrics(pred, act)
    assert m.rmse == pytest.approx(rmse, rel=1e-9, abs=1e-9) and m.mae == pytest.approx(mae, rel=1e-9, abs=1e-9)


# -- artifact files -------------------------------------------------------


def _forest_artifact():
    rng = np.random.default_rng(8)
    t = table(a=rng.normal(size=30), b=rng.normal(size=30), y=rng.normal(size=30))
    return fit_forest(t, forest(("a", "b"), n_trees=4, min_samples_leaf=2, seed=3)), t


def test_round_trip_is_bit_exact(tmp_path):
    lin = fit_linear(table(x=[0.1, 0.7, 2.3, 5.0], y=[1.0, 0.3, 2.2, 9.9]), linear())
    save_model(lin, tmp_path / "lin.json")
    back = load_model(tmp_path / "lin.json")
    assert back.payload == lin.payload and back.content_hash == lin.content_hash
    art, t = _forest_artifact()
    save_model(art, tmp_path / "rf.json")
    back = load_model(tmp_path / "rf.json")
    probe = table(a=np.linspace(-3, 3, 40), b=np.linspace(3, -3, 40))
    assert np.array_equal(predict(back, probe)[0], predict(art, probe)[0])
    assert np.array_equal(predict(back, t)[0], predict(art, t)[0])


def test_truncated_and_tampered_files(tmp_path):
    art, _ = _forest_artifact()
    save_model(art, tmp_path / "m.json")
    text = (tmp_path / "m.json").read_text()
    (tmp_path / "cut.json").write_text(text[: len(text) // 2])
    with pytest.raises(CorruptArtifact):
        load_model(tmp_path / "cut.json")
    doc = json.loads(text)
    doc["payload"]["trees"][0]["value"][0] += 1.0
    (tmp_path / "edit.json").write_text(json.dumps(doc))
    with pytest.raises(CorruptArtifact):
        load_model(tmp_path / "edit.json")
    doc = json.loads(text)
    doc["schema_version"] = 99
    (tmp_path / "v.json").write_text(json.dumps(doc))
    with pytest.raises(UnsupportedSchemaVersion):
        load_model(tmp_path / "v.json")


def test_artifact_documents_training():
    art, _ = _forest_artifact()
    doc = art.to_document()
    assert doc["metadata"]["feature_order"] == ["a", "b"] and doc["metadata"]["n_train"] == 30
    assert doc["metadata"]["tree_seed_rule"] == "seed XOR tree_index"
    for tree in doc["payload"]["trees"]:
        assert all(math.isfinite(t) for t in tree["threshold"])
    assert ModelArtifact.from_document(doc).content_hash == art.content_hash


def test_predictions_csv_round_trip(tmp_path):
    p = Predictions(np.array([0, 1000, 2000]), np.array([1.0, np.nan, 0.1]), np.array([1.5, 2.0, np.nan]),
                    np.array([True, True, False]))
    p.write(tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines() == [
        "timestamp_ms,actual,predicted,usable", "0,1.0,1.5,true", "1000,,2.0,true", "2000,0.1,,false",
    ]
    back = Predictions.read(tmp_path / "p.csv")
    assert np.array_equal(back.predicted, p.predicted, equal_nan=True) and back.usable.tolist() == [True, True, False]
