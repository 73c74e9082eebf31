import numpy as np
import pytest

from cascadet.forest import Forest, ForestConfig, TreeNode, fit_forest, predict_proba
from cascadet.treeshap import (
    AttributionReport,
    TreeShapExplainer,
    aggregate_by_sensor,
    explain_exact_bruteforce,
    explain_treeshap,
    sensor_ranking,
)


def _leaf(probability):
    probability = np.asarray(probability, dtype=np.float64)
    return TreeNode(class_counts=probability.copy(), prediction=int(np.argmax(probability)), probability=probability)


def _split(feature, threshold, left, right):
    return TreeNode(feature_index=feature, threshold=threshold, left=left, right=right)


def _forest(trees, n_features):
    return Forest(trees, n_features, np.ones(4), ForestConfig())


def test_single_leaf_tree_all_phi_zero():
    forest = _forest([_leaf([0.7, 0.1, 0.1, 0.1])], 3)
    bg = np.zeros((4, 3))
    for explain in (explain_exact_bruteforce, explain_treeshap):
        report = explain(forest, np.ones(3), bg)
        assert np.all(report.phi == 0.0)
        assert np.allclose(report.base_value, [0.7, 0.1, 0.1, 0.1])


def test_depth_one_tree_hand_enumeration():
    # Split on feature 1 at 0.5; leaves differ only in class 0 mass.
    tree = _split(1, 0.5, _leaf([1.0, 0.0, 0.0, 0.0]), _leaf([0.0, 1.0, 0.0, 0.0]))
    forest = _forest([tree], 3)
    x = np.array([0.2, 0.9, 0.4])  # routes right
    bg = np.array([[0.1, 0.1, 0.3]])  # routes left
    # Hand enumeration over the only informative feature j=1:
    # v(S) = right-leaf output if 1 in S else left-leaf output; all other
    # features are null, so phi_1 = f(x) - f(bg) on each class.
    for explain in (explain_exact_bruteforce, explain_treeshap):
        report = explain(forest, x, bg)
        assert np.allclose(report.phi[1], [-1.0, 1.0, 0.0, 0.0])
        assert np.allclose(report.phi[0], 0.0)
        assert np.allclose(report.phi[2], 0.0)


def test_symmetric_features_get_equal_phi():
    # f(x) counts how many of features 0,1 exceed 0.5 -- symmetric roles.
    inner_l = _split(1, 0.5, _leaf([1.0, 0.0, 0.0, 0.0]), _leaf([0.5, 0.5, 0.0, 0.0]))
    inner_r = _split(1, 0.5, _leaf([0.5, 0.5, 0.0, 0.0]), _leaf([0.0, 1.0, 0.0, 0.0]))
    tree = _split(0, 0.5, inner_l, inner_r)
    forest = _forest([tree], 2)
    x = np.array([1.0, 1.0])
    bg = np.zeros((1, 2))
    for explain in (explain_exact_bruteforce, explain_treeshap):
        report = explain(forest, x, bg)
        assert np.allclose(report.phi[0], report.phi[1], atol=1e-12)


def test_dummy_feature_gets_zero():
    tree = _split(0, 0.0, _leaf([1.0, 0.0, 0.0, 0.0]), _leaf([0.0, 0.0, 0.0, 1.0]))
    forest = _forest([tree], 4)
    rng = np.random.default_rng(0)
    x = rng.normal(size=4)
    bg = rng.normal(size=(6, 4))
    for explain in (explain_exact_bruteforce, explain_treeshap):
        report = explain(forest, x, bg)
        assert np.all(report.phi[1:] == 0.0)


def test_x_equal_to_background_gives_zero_phi(rng):
    X = rng.normal(size=(60, 5))
    y = rng.integers(0, 4, size=60)
    y[:4] = [0, 1, 2, 3]
    forest = fit_forest(X, y, ForestConfig(n_trees=4, max_depth=4, seed=1))
    x = X[7]
    bg = np.tile(x, (5, 1))
    report = explain_treeshap(forest, x, bg)
    assert np.max(np.abs(report.phi)) < 1e-12


def test_local_accuracy(rng):
    X = rng.normal(size=(80, 6))
    y = rng.integers(0, 4, size=80)
    y[:4] = [0, 1, 2, 3]
    forest = fit_forest(X, y, ForestConfig(n_trees=8, max_depth=5, seed=2))
    bg = X[rng.choice(80, 12, replace=False)]
    explainer = TreeShapExplainer(forest, bg)
    for i in range(10):
        x = X[int(rng.integers(0, 80))]
        report = explainer.explain(x)
        assert np.max(np.abs(report.reconstruction() - predict_proba(forest, x))) < 1e-9


def test_oracle_equivalence_randomized(rng):
    worst = 0.0
    for trial in range(10):
        m = int(rng.integers(3, 13))
        n = int(rng.integers(30, 70))
        X = rng.normal(size=(n, m))
        y = rng.integers(0, 4, size=n)
        y[:4] = [0, 1, 2, 3]
        forest = fit_forest(X, y, ForestConfig(n_trees=5, max_depth=4, seed=trial))
        bg = X[rng.choice(n, 10, replace=False)]
        x = X[int(rng.integers(0, n))]
        a = explain_exact_bruteforce(forest, x, bg)
        b = explain_treeshap(forest, x, bg)
        worst = max(worst, float(np.max(np.abs(a.phi - b.phi))))
    assert worst < 1e-9


def test_additivity_over_trees(rng):
    X = rng.normal(size=(50, 4))
    y = rng.integers(0, 4, size=50)
    y[:4] = [0, 1, 2, 3]
    forest = fit_forest(X, y, ForestConfig(n_trees=5, max_depth=3, seed=4))
    bg = X[:8]
    x = X[3]
    whole = explain_treeshap(forest, x, bg)
    parts = [
        explain_treeshap(Forest([t], 4, forest.class_weights, forest.config), x, bg)
        for t in forest.trees
    ]
    mean_phi = np.mean([p.phi for p in parts], axis=0)
    assert np.max(np.abs(whole.phi - mean_phi)) < 1e-9


def test_bruteforce_refuses_large_m():
    forest = _forest([_leaf([0.25, 0.25, 0.25, 0.25])], 17)
    with pytest.raises(ValueError, match="refuses"):
        explain_exact_bruteforce(forest, np.zeros(17), np.zeros((2, 17)))


def test_empty_background_rejected():
    forest = _forest([_leaf([0.25, 0.25, 0.25, 0.25])], 2)
    with pytest.raises(ValueError, match="background"):
        explain_treeshap(forest, np.zeros(2), np.zeros((0, 2)))


# -- per-sensor aggregation ---------------------------------------------------


def _report(phi, names):
    return AttributionReport(
        phi=np.asarray(phi, dtype=np.float64),
        base_value=np.zeros(4),
        feature_names=tuple(names),
    )


_NAMES = ("s1_mean", "s1_std", "s1_min", "s1_max")


def test_aggregate_all_zero():
    agg = aggregate_by_sensor(_report(np.zeros((4, 4)), _NAMES))
    assert agg == {"s1": 0.0}


def test_aggregate_absolute_sum():
    phi = np.zeros((4, 4))
    phi[0, 2] = 0.1  # s1_mean, class 2
    phi[1, 2] = -0.2  # s1_std
    agg = aggregate_by_sensor(_report(phi, _NAMES), class_index=2)
    assert agg["s1"] == pytest.approx(0.3)


def test_aggregate_mean_over_classes_default():
    phi = np.zeros((4, 4))
    phi[0] = [0.4, -0.4, 0.0, 0.0]  # mean |phi| = 0.2
    agg = aggregate_by_sensor(_report(phi, _NAMES))
    assert agg["s1"] == pytest.approx(0.2)


def test_aggregate_permutation_invariance():
    names = ("a_mean", "a_std", "a_min", "a_max", "b_mean", "b_std", "b_min", "b_max")
    phi = np.arange(32, dtype=np.float64).reshape(8, 4)
    agg1 = aggregate_by_sensor(_report(phi, names))
    perm = [4, 5, 6, 7, 0, 1, 2, 3]
    agg2 = aggregate_by_sensor(_report(phi[perm], tuple(names[i] for i in perm)))
    assert agg1 == agg2


def test_aggregate_rejects_bad_names():
    with pytest.raises(ValueError, match="does not follow"):
        aggregate_by_sensor(_report(np.zeros((2, 4)), ("s1_mean", "s1_variance")))
    with pytest.raises(ValueError, match="missing"):
        aggregate_by_sensor(_report(np.zeros((3, 4)), ("s1_mean", "s1_std", "s1_min")))


def test_sensor_ranking_descending():
    names = ("a_mean", "a_std", "a_min", "a_max", "b_mean", "b_std", "b_min", "b_max")
    phi = np.zeros((8, 4))
    phi[4:] = 1.0  # channel b dominates
    report = _report(phi, names)
    report.sensor_aggregates = aggregate_by_sensor(report)
    ranked = sensor_ranking(report)
    assert ranked[0][0] == "b"
    assert ranked[0][1] > ranked[1][1]


def test_exports(tmp_path, rng):
    from cascadet.treeshap import export_attribution_csv, export_attribution_json

    X = rng.normal(size=(40, 4))
    y = rng.integers(0, 4, size=40)
    y[:4] = [0, 1, 2, 3]
    forest = fit_forest(X, y, ForestConfig(n_trees=3, max_depth=3, seed=6))
    names = ("a_mean", "a_std", "a_min", "a_max")
    report = explain_treeshap(forest, X[0], X[:6], feature_names=names)
    export_attribution_csv(report, tmp_path / "a.csv")
    export_attribution_json(report, tmp_path / "a.json")
    lines = (tmp_path / "a.csv").read_text().strip().splitlines()
    assert lines[0] == "feature,class,phi"
    assert len(lines) == 1 + 4 * 4
    import json

    payload = json.loads((tmp_path / "a.json").read_text())
    assert "sensor_ranking" in payload and "base_value" in payload
