import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from policylearn.data import Dataset
from policylearn.nuisance import (
    ScoreConfig,
    SingularSystemError,
    compute_scores,
    fit_linear_regression,
    fit_logistic_regression,
    fit_nuisances,
    quadratic_features,
    score_arrays,
    true_nuisances,
)
from policylearn.scenarios import generate_data, sample_scenario


def test_linear_regression_exact_recovery():
    X = np.random.default_rng(0).standard_normal((30, 2))
    coef = fit_linear_regression(X, 2 * X[:, 0] - X[:, 1] + 3)
    np.testing.assert_allclose(coef, [2, -1, 3], atol=1e-10)
    np.testing.assert_allclose(fit_linear_regression(X, np.full(30, 4.5)), [0, 0, 4.5], atol=1e-10)


def test_linear_regression_singular_and_ridge():
    X = np.random.default_rng(1).standard_normal((30, 1))
    F = np.hstack([X, X])
    with pytest.raises(SingularSystemError):
        fit_linear_regression(F, X[:, 0])
    coef = fit_linear_regression(F, X[:, 0], ridge=1e-3)
    assert coef[0] == pytest.approx(coef[1], rel=1e-9)


def test_logistic_intercept_is_log_odds():
    labels = np.array([1.0] * 75 + [-1.0] * 25)
    fit = fit_logistic_regression(np.zeros((100, 0)), labels)
    assert fit.coef[-1] == pytest.approx(math.log(3), abs=1e-4)


def test_logistic_balanced_independent_labels():
    X = np.random.default_rng(2).standard_normal((100, 2))
    X = np.vstack([X, X])  # every x appears once under each label
    labels = np.concatenate([np.ones(100), -np.ones(100)])
    fit = fit_logistic_regression(X, labels)
    np.testing.assert_allclose(fit.coef, 0.0, atol=1e-6)


def test_logistic_single_class_is_error():
    with pytest.raises(ValueError):
        fit_logistic_regression(np.zeros((5, 1)), np.ones(5))


def test_propensity_recovery_linear_scenario():
    spec = sample_scenario("Linear", 11)
    ds = generate_data(spec, 5000, seed=3)
    nuis = fit_nuisances(ds, np.arange(ds.n), "linear-logistic")
    coef = np.array(nuis.info["propensity_coef"])
    np.testing.assert_allclose(coef[:2], spec.b, atol=0.1)
    assert coef[2] == pytest.approx(spec.b0, abs=0.1)


def test_constant_outcomes():
    rng = np.random.default_rng(4)
    ds = Dataset(rng.standard_normal((200, 2)), rng.choice([-1.0, 1.0], 200), np.ones(200))
    for family in ("linear-logistic", "correct-spec-quadratic"):
        nuis = fit_nuisances(ds, np.arange(200), family)
        np.testing.assert_allclose(nuis.mu(ds.X, 1.0), 1.0, atol=1e-10)
        np.testing.assert_allclose(nuis.mu(ds.X, -1.0), 1.0, atol=1e-10)


def test_empty_arm_is_error():
    ds = Dataset(np.zeros((4, 2)), np.ones(4), np.zeros(4))
    with pytest.raises(ValueError, match="arm"):
        fit_nuisances(ds, np.arange(4))


def test_mlp_family_early_stopping_contract():
    spec = sample_scenario("Quadratic", 5)
    ds = generate_data(spec, 600, seed=5)
    nuis = fit_nuisances(ds, np.arange(ds.n), "mlp", seed=5)
    for initial, final in nuis.info["validation"].values():
        assert final <= initial


def test_quadratic_features_layout():
    np.testing.assert_array_equal(quadratic_features(np.array([[2.0, 3.0]])), [[2, 3, 4, 6, 9]])


def test_score_formulas():
    one = np.array([1.0])
    assert score_arrays(one, one, one, [2.0], [0.5], "DM")[0][0] == 1.5
    assert score_arrays(one, [2.0], [0.5], [0.0], [0.0], "IPS")[0][0] == 4.0
    assert score_arrays(one, [2.0], [0.5], [1.0], [0.0], "DR")[0][0] == 3.0


def test_clipping_counts_binding_rows():
    T = np.array([1.0, -1.0, 1.0])
    psi, n = score_arrays(T, np.ones(3), np.array([0.001, 0.999, 0.5]), np.zeros(3), np.zeros(3), "IPS", 0.01)
    assert n == 2
    np.testing.assert_allclose(psi, [100.0, -100.0, 2.0])


def test_score_config_validation():
    with pytest.raises(ValueError):
        ScoreConfig("XX")
    with pytest.raises(ValueError):
        ScoreConfig("DR", 0.0)


@settings(max_examples=30, deadline=None)
@given(t=st.sampled_from([-1.0, 1.0]), y=st.floats(-10, 10), e=st.floats(0.05, 0.95),
       m1=st.floats(-5, 5), m0=st.floats(-5, 5))
def test_dr_is_dm_plus_residual_ips(t, y, e, m1, m0):
    T, Y = np.array([t]), np.array([y])
    dr = score_arrays(T, Y, [e], [m1], [m0], "DR")[0][0]
    resid = y - (m1 if t > 0 else m0)
    et = e if t > 0 else 1 - e
    assert dr == pytest.approx((m1 - m0) + t * resid / et, rel=1e-9, abs=1e-9)


def _mean_effect(spec, data, nuis, kind):
    return compute_scores(data, nuis, ScoreConfig(kind, 1e-3)).psi.mean()


def test_oracle_scores_agree_and_dr_is_doubly_robust():
    spec = sample_scenario("Linear", 2)
    data = generate_data(spec, 200_000, seed=6)
    truth = spec.tau(data.X).mean()
    good = true_nuisances(spec.propensity, lambda X: spec.mu(X, 1.0), lambda X: spec.mu(X, -1.0))
    for kind in ("IPS", "DM", "DR"):
        psi = compute_scores(data, good, ScoreConfig(kind, 1e-3)).psi
        assert abs(psi.mean() - truth) <= 4 * psi.std() / np.sqrt(psi.size) + 1e-12
    bad_mu = true_nuisances(spec.propensity, lambda X: np.zeros(len(X)), lambda X: np.full(len(X), 3.0))
    bad_e = true_nuisances(lambda X: np.full(len(X), 0.5), lambda X: spec.mu(X, 1.0), lambda X: spec.mu(X, -1.0))
    for nuis in (bad_mu, bad_e):
        psi = compute_scores(data, nuis, ScoreConfig("DR", 1e-3)).psi
        assert abs(psi.mean() - truth) <= 4 * psi.std() / np.sqrt(psi.size)
    # DM with wrong outcome models is biased
    assert abs(_mean_effect(spec, data, bad_mu, "DM") - truth) > 1.0
