import numpy as np
import pytest

from fedecg.errors import ArgumentError, CapabilityError, SchemaError
from fedecg.features import FeatureRegistry
from fedecg.selection import (GbdtConfig, ImportanceReport, average_importance, fit_gbdt, importance,
                              select_registry, select_top_k)


def planted(seed, n=60, f=5):
    r = np.random.default_rng(seed)
    X = r.normal(size=(n, f))
    return X, np.argmax(X[:, :3], axis=1)


def test_threshold_on_feature_zero_drives_every_first_round_tree(rng):
    X = rng.normal(size=(80, 4))
    y = (X[:, 0] > 0.2).astype(int)
    m = fit_gbdt(X, y)
    assert all(t.feature[0] == 0 for t in m.trees[0])
    assert np.argmax(importance(m).gain) == 0


def test_constant_matrix_gives_leaf_only_trees():
    m = fit_gbdt(np.ones((10, 3)), np.array([0, 1] * 5))
    assert all(t.is_leaf_only for rt in m.trees for t in rt)
    assert np.all(importance(m).gain == 0)


def test_training_loss_strictly_decreases():
    X, y = planted(0)
    loss = fit_gbdt(X, y).loss_history
    assert np.all(np.diff(loss[:11]) < 0)


@pytest.mark.parametrize("seed", range(10))
def test_planted_features_rank_top_three(seed):
    X, y = planted(seed)
    assert set(importance(fit_gbdt(X, y)).ranking[:3]) == {0, 1, 2}


def test_errors():
    with pytest.raises(CapabilityError):
        fit_gbdt(np.zeros((4, 2)), np.zeros(4))
    with pytest.raises(SchemaError):
        fit_gbdt(np.array([[np.nan], [1.0]]), np.array([0, 1]))
    with pytest.raises(SchemaError):
        ImportanceReport(np.array([-1.0]), np.array([0]))


def test_top_k_rules():
    rep = ImportanceReport(np.zeros(5), np.zeros(5, dtype=int))
    assert list(select_top_k(rep, 2)) == [0, 1]
    rep = ImportanceReport(np.array([1.0, 3.0, 3.0, 0.5]), np.zeros(4, dtype=int))
    assert list(select_top_k(rep, 4)) == [1, 2, 0, 3]
    for k in (0, 5):
        with pytest.raises(ArgumentError):
            select_top_k(rep, k)


def test_top_120_of_full_registry(rng):
    reg = FeatureRegistry.default()
    rep = ImportanceReport(rng.random(len(reg)), np.zeros(len(reg), dtype=int), tuple(reg.names))
    idx, sub = select_registry(reg, rep, 120)
    assert len(idx) == 120 == len(sub) and sub.names[0] == reg.names[idx[0]]


def test_row_permutation_keeps_first_round_and_ranking(rng):
    X, y = planted(3)
    perm = rng.permutation(len(y))
    a, b = fit_gbdt(X, y), fit_gbdt(X[perm], y[perm])
    for ta, tb in zip(a.trees[0], b.trees[0]):
        assert ta.feature == tb.feature
        np.testing.assert_allclose(ta.threshold, tb.threshold)
        np.testing.assert_allclose(ta.value, tb.value, atol=1e-12)
    assert list(importance(a).ranking[:3]) == list(importance(b).ranking[:3])


def test_duplicate_column_spreads_gain():
    X, y = planted(5)
    solo = importance(fit_gbdt(X, y)).gain[0]
    dup = importance(fit_gbdt(np.column_stack([X, X[:, 0]]), y)).gain
    assert dup[0] + dup[5] >= solo - 1e-9
    assert dup[0] <= solo + 1e-9 and dup[5] <= solo + 1e-9


def test_average_importance_weights_by_size():
    a = ImportanceReport(np.array([1.0, 0.0]), np.array([1, 0]))
    b = ImportanceReport(np.array([0.0, 4.0]), np.array([0, 2]))
    avg = average_importance([a, b], [3, 1])
    np.testing.assert_allclose(avg.gain, [0.75, 1.0])
    assert list(avg.split_count) == [1, 2]


def test_importance_csv(tmp_path):
    rep = ImportanceReport(np.array([0.5, 2.0]), np.array([1, 3]), ("rr_mean", "age"))
    rep.to_csv(tmp_path / "imp.csv")
    lines = (tmp_path / "imp.csv").read_text().splitlines()
    assert lines[0] == "name,gain,splits,rank" and lines[1].startswith("age,2.0,3,1")


def test_config_validation():
    with pytest.raises(ArgumentError):
        GbdtConfig(rounds=0)
