import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedecg.errors import CapabilityError, ConvergenceError, SchemaError
from fedecg.features import MISSING_AGE, FeatureRegistry, FeatureVector
from fedecg.normalization import (MAX_EXPANSIONS, CountingClient, QuantileQuery, ScalerParams, Transcript,
                                  apply_scaler, federated_quantile, federated_quantiles,
                                  fit_pooled_scaler, fit_robust_scaler, pooled_quantile, tolerance)

EPS = 1e-6


def q(clients, qv, eps=EPS, **kw):
    return federated_quantile(clients, QuantileQuery(0, qv, eps, **kw))


def test_single_client_median():
    assert q([np.array([1, 2, 3, 4, 100.0])], 0.5) == pytest.approx(3.0, abs=EPS)


def test_constant_clients():
    assert q([np.full(5, 7.0), np.full(3, 7.0)], 0.5) == pytest.approx(7.0, abs=EPS)


def test_two_clients_quarter_quantile():
    got = q([np.array([1, 2.0]), np.array([3, 4.0])], 0.25)
    assert got == pytest.approx(pooled_quantile([1, 2, 3, 4], 0.25), abs=2 * EPS)


def test_disjoint_ranges_median():
    got = q([np.arange(10.0), np.arange(10.0, 20.0)], 0.5)
    assert got == pytest.approx(9.5, abs=2 * EPS)


def test_transcript_holds_only_thresholds_and_counts():
    tr = Transcript()
    federated_quantile([np.array([0.3, 0.9, 0.1])], QuantileQuery(0, 0.5), tr)
    assert len(tr) > 0
    for thr, count in tr.messages():
        assert isinstance(thr, float) and isinstance(count, int)


def test_empty_federation_and_bad_query():
    with pytest.raises(CapabilityError):
        q([], 0.5)
    with pytest.raises(SchemaError):
        QuantileQuery(0, 1.5)


def test_unbounded_values_fail_to_bracket():
    with pytest.raises(ConvergenceError):
        q([np.array([1e300, 1e300])], 0.5, lo=-1.0, hi=1.0)
    assert MAX_EXPANSIONS == 64


def test_bounds_expand_to_far_values():
    assert q([np.array([1e6, 2e6, 3e6])], 0.5, eps=1e-3) == pytest.approx(2e6, abs=2e-3)


@given(st.lists(st.lists(st.floats(-50, 50), min_size=1, max_size=20), min_size=1, max_size=5),
       st.sampled_from([0.25, 0.5, 0.75]))
def test_matches_pooled_oracle(parts, qv):
    clients = [np.array(p) for p in parts]
    eps = tolerance()
    got = federated_quantiles(clients, qv, eps=eps)[0]
    assert abs(got - pooled_quantile(np.concatenate(clients), qv)) <= 2 * eps


def _reg(n):
    return FeatureRegistry.default().subset(range(20, 20 + n))


def test_scaler_matches_pooled_fit_and_ignores_client_order(rng):
    parts = [rng.normal(size=(n, 3)) * [0.1, 1, 5] for n in (7, 1, 12)]
    reg = _reg(3)
    fed = fit_robust_scaler(parts, reg)
    pooled = fit_pooled_scaler(np.vstack(parts), reg)
    for a, b in ((fed.median, pooled.median), (fed.q25, pooled.q25), (fed.q75, pooled.q75)):
        assert np.max(np.abs(a - b)) <= 2 * tolerance()
    again = fit_robust_scaler(parts[::-1], reg)
    np.testing.assert_array_equal(again.median, fed.median)


def test_apply_scaler_examples():
    reg = _reg(1)
    p = fit_robust_scaler([np.array([[1.0], [2.0], [3.0], [4.0], [100.0]])], reg)
    assert apply_scaler(np.array([100.0]), p)[0] == pytest.approx(48.5, abs=1e-6)
    assert apply_scaler(p.median.copy(), p)[0] == 0.0


def test_constant_feature_scales_to_zero():
    reg = _reg(1)
    p = fit_robust_scaler([np.full((4, 1), 3.0), np.full((2, 1), 3.0)], reg)
    assert np.all(apply_scaler(np.array([[3.0], [9.0]]), p) == 0.0)


def test_missing_age_excluded_and_imputed():
    reg = FeatureRegistry.default().subset([0, 20])
    X = np.array([[40.0, 1], [MISSING_AGE, 2], [60.0, 3], [MISSING_AGE, 4]])
    p = fit_robust_scaler([X[:2], X[2:]], reg)
    assert p.median[0] == pytest.approx(50.0, abs=1e-6)
    out = p.transform(np.array([[MISSING_AGE, 2.5]]))
    assert out[0, 0] == 0.0


def test_scaler_vector_and_registry_checks():
    reg = _reg(2)
    p = fit_robust_scaler([np.array([[0.0, 1.0], [2.0, 5.0], [4.0, 9.0]])], reg)
    v = apply_scaler(FeatureVector(np.array([2.0, 5.0]), "r", 0), p)
    assert np.all(np.abs(v.values) < 1e-6) and v.record_id == "r"
    with pytest.raises(SchemaError):
        p.transform(np.zeros(3))


def test_scaler_json_roundtrip(tmp_path):
    reg = _reg(2)
    p = fit_robust_scaler([np.array([[0.0, 1.0], [2.0, 5.0], [4.0, 9.0]])], reg)
    p.save(tmp_path / "s.json")
    back = ScalerParams.from_json((tmp_path / "s.json").read_text())
    assert back.names == p.names
    np.testing.assert_array_equal(back.q75, p.q75)


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=30))
def test_scaling_preserves_order_and_centres_median(xs):
    X = np.array(xs)[:, None]
    p = fit_robust_scaler([X], _reg(1))
    out = p.transform(X)[:, 0]
    if p.iqr[0] > 0:
        order = np.argsort(X[:, 0], kind="stable")
        assert np.all(np.diff(out[order]) >= 0)
        assert abs(np.median(out)) <= 2 * tolerance() / p.iqr[0] + 1e-12
