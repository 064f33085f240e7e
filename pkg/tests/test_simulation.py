import numpy as np
import pytest

from oracles import monte_carlo_ate
from otmatch import simulation as S
from otmatch.exceptions import InputError


def test_single_component_lln():
    spec = S.MixtureSpec(((1.0, np.zeros(2), np.eye(2)),))
    X = S.sample_mixture(spec, 10**5, 1)
    assert np.all(np.abs(X.mean(axis=0)) < 0.02)
    assert np.all(np.abs(X.var(axis=0) - 1) < 0.02)


def test_zero_weight_component_never_sampled():
    spec = S.MixtureSpec(((1.0, np.zeros(2), np.eye(2)), (0.0, np.full(2, 100.0), np.eye(2))))
    assert S.sample_mixture(spec, 10**4, 2).max() < 50


def test_case1_control_mean():
    X = S.sample_mixture(S.CASES[1][0], 10**6, 3)
    np.testing.assert_allclose(X.mean(axis=0), -0.25, atol=0.01)


def test_mixture_validation():
    with pytest.raises(InputError):
        S.MixtureSpec(((1.0, np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]])),))
    with pytest.raises(InputError):
        S.MixtureSpec(((0.5, np.zeros(2), np.eye(2)),))


def test_outcome_model():
    m0, m1 = S.outcome_means(np.zeros((1, 2)))
    assert m0[0] == -1.0 and m1[0] == 2.0
    X = np.random.default_rng(0).normal(size=(5, 2))
    np.testing.assert_allclose(S.true_effect(X),
                               (2 + 2 * X[:, 0] + X[:, 1]) - (-1 + X[:, 0] * X[:, 1]))
    a = S.sample_outcomes(X, 1, 9)
    np.testing.assert_array_equal(a, S.sample_outcomes(X, 1, 9))
    assert not np.array_equal(a, S.sample_outcomes(X, 1, 10))
    with pytest.raises(InputError):
        S.sample_outcomes(np.zeros((3, 3)), 0, 1)


def test_outcome_noise_scale():
    X = np.zeros((200000, 2))
    assert S.sample_outcomes(X, 1, 4).std() == pytest.approx(np.sqrt(0.5), rel=0.01)
    assert S.sample_outcomes(X, 1, 4, noise_is_sd=True).std() == pytest.approx(0.5, rel=0.01)
    assert S.sample_outcomes(X, 0, 4).std() == pytest.approx(1.0, rel=0.01)


@pytest.mark.parametrize("case", [1, 2])
def test_population_ate_against_monte_carlo(case):
    assert S.population_ate(case) == pytest.approx(monte_carlo_ate(case), abs=0.005)


def test_make_case_shapes():
    d = S.make_case(2, 5)
    assert tuple(d.arm_sizes()) == (1000, 100)
    assert d.columns == ("x1", "x2")
    np.testing.assert_array_equal(d.outcome, S.make_case(2, 5).outcome)


def test_run_case_deterministic():
    kw = dict(methods=("ot", "knn1", "unadjusted"), eps=(5e-2,), B=4, replications=1,
              seed=3, n0=120, n1=30)
    a = S.run_case(2, **kw)
    b = S.run_case(2, **kw)
    assert repr([r.as_dict() for r in a]) == repr([r.as_dict() for r in b])
    assert [r.method for r in a] == ["ot", "knn1", "unadjusted"]
    assert all(r.ATE_diff >= 0 for r in a)


def test_run_illustration():
    rows = S.run_illustration(eps=(0.5,), seed=1)
    assert len(rows) == 1 and rows[0].converged
    assert max(rows[0].marginal_errors) < 1e-7


def test_derive_seed_distinct():
    seeds = {S.derive_seed(7, r) for r in range(100)}
    assert len(seeds) == 100 and S.derive_seed(7, 1) == S.derive_seed(7, 1)
