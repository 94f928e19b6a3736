import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_t

from oracles import niw_posterior_uncentred, niw_predictive_mc, student_t_density_2d_grid
from rbal.gmm import (GmmPosterior, NiwPrior, fit_supervised, mvt_logpdf, predict_posterior,
                      predictive_log_density, prior_posterior, student_t_params)


@pytest.fixture
def prior2():
    return NiwPrior(np.zeros(2), 1.0, 4.0, np.eye(2))


def test_posterior_matches_uncentred_oracle(prior2, rng):
    X = rng.normal(size=(30, 2)) * [1.0, 2.0] + [3.0, -1.0]
    post = fit_supervised(X, np.ones(30, dtype=int), prior2, K=1)
    mn, kn, vn, Sn = niw_posterior_uncentred(X, prior2.m0, prior2.kappa0, prior2.v0, prior2.S0)
    np.testing.assert_allclose(post.means[0], mn, rtol=1e-12)
    np.testing.assert_allclose(post.scatters[0], Sn, rtol=1e-10)
    assert post.kappas[0] == kn and post.dofs[0] == vn


def test_hand_computed_one_point():
    # one point at x = 2 in 1-D, m0 = 0, k0 = 1, v0 = 2, S0 = 1
    prior = NiwPrior(np.zeros(1), 1.0, 2.0, np.eye(1))
    post = fit_supervised(np.array([[2.0]]), [1], prior, K=1)
    assert post.means[0, 0] == pytest.approx(1.0)
    assert post.kappas[0] == 2.0 and post.dofs[0] == 3.0
    # S_n = 1 + 0 + (1*1/2) * 4 = 3
    assert post.scatters[0, 0, 0] == pytest.approx(3.0)
    loc, shape, dof = student_t_params(post, 0)
    assert dof == 3.0
    assert shape[0, 0] == pytest.approx(3.0 / (2.0 * 3.0) * 3.0)


def test_predictive_matches_niw_monte_carlo(prior2, rng):
    X = rng.normal(size=(6, 2)) + [0.5, 0.0]
    post = fit_supervised(X, np.ones(6, dtype=int), prior2, K=1)
    probes = np.array([[0.0, 0.0], [1.0, 1.0], [-1.5, 2.0]])
    mc = niw_predictive_mc(probes, post.means[0], post.kappas[0], post.dofs[0], post.scatters[0],
                           200_000, np.random.default_rng(7))
    exact = np.exp([predictive_log_density(p, 1, post) for p in probes])
    np.testing.assert_allclose(exact, mc, rtol=0.02)


def test_mvt_matches_scipy(rng):
    S = np.array([[2.0, 0.4], [0.4, 1.0]])
    X = rng.normal(size=(10, 2))
    ours = mvt_logpdf(X, np.array([0.3, -0.2]), S, 5.0)
    ref = multivariate_t(loc=[0.3, -0.2], shape=S, df=5.0).logpdf(X)
    np.testing.assert_allclose(ours, ref, rtol=1e-12)


def test_predictive_integrates_to_one(prior2, rng):
    X = rng.normal(size=(4, 2))
    post = fit_supervised(X, np.ones(4, dtype=int), prior2, K=1)
    loc, shape, dof = student_t_params(post, 0)
    mass = student_t_density_2d_grid(loc, shape, dof, 150.0, 1501)
    assert mass == pytest.approx(1.0, abs=1e-3)


def test_empty_classes_fall_back_to_prior(prior2):
    X = np.array([[1.0, 1.0], [2.0, 0.0]])
    post = fit_supervised(X, [2, 2], prior2, K=3)
    base = prior_posterior(prior2, 3)
    for k in (0, 2):
        np.testing.assert_array_equal(post.means[k], base.means[k])
        np.testing.assert_array_equal(post.scatters[k], prior2.S0)
    np.testing.assert_allclose(post.class_prior(), np.array([1, 3, 1]) / 5)


def test_posterior_sums_to_one_and_shapes(prior2, rng):
    X = rng.normal(size=(20, 2))
    post = fit_supervised(X, rng.integers(1, 4, 20), prior2, K=3)
    P = predict_posterior(rng.normal(size=(7, 2)), post)
    assert P.shape == (7, 3)
    np.testing.assert_allclose(P.sum(axis=1), 1.0)
    single = predict_posterior(np.zeros(2), post)
    assert single.shape == (3,)
    with pytest.raises(ValueError):
        predict_posterior(np.zeros(3), post)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_order_invariance(seed):
    rng = np.random.default_rng(seed)
    prior = NiwPrior.default(2)
    X = rng.normal(size=(15, 2))
    y = rng.integers(1, 4, 15)
    perm = rng.permutation(15)
    a = fit_supervised(X, y, prior, K=3)
    b = fit_supervised(X[perm], y[perm], prior, K=3)
    np.testing.assert_allclose(a.means, b.means, atol=1e-12)
    np.testing.assert_allclose(a.scatters, b.scatters, atol=1e-10)


def test_far_point_goes_to_nearer_class(prior2):
    X = np.vstack([np.full((10, 2), -3.0) + np.eye(2)[None, 0] * 0.1 * np.arange(10)[:, None],
                   np.full((10, 2), 3.0) + np.eye(2)[None, 1] * 0.1 * np.arange(10)[:, None]])
    y = np.r_[np.ones(10, int), np.full(10, 2)]
    post = fit_supervised(X, y, prior2, K=2)
    assert predict_posterior(np.array([-3.0, -3.0]), post)[0] > 0.99


def test_validation(prior2):
    with pytest.raises(ValueError):
        NiwPrior(np.zeros(2), 1.0, 0.5, np.eye(2))
    with pytest.raises(ValueError):
        NiwPrior(np.zeros(2), 1.0, 4.0, -np.eye(2))
    with pytest.raises(ValueError):
        fit_supervised(np.zeros((2, 2)), [1, 5], prior2, K=3)
    with pytest.raises(ValueError):
        fit_supervised(np.array([[np.nan, 0.0]]), [1], prior2, K=1)


def test_dict_round_trip(prior2, rng):
    post = fit_supervised(rng.normal(size=(8, 2)), rng.integers(1, 3, 8), prior2, K=2)
    back = GmmPosterior.from_dict(post.to_dict())
    for k in ("means", "scatters", "counts"):
        np.testing.assert_array_equal(getattr(back, k), getattr(post, k))


def test_oracle_inverse_wishart_sampler_agrees_with_scipy():
    from scipy.stats import invwishart
    from oracles import inv_wishart_2d
    S = np.array([[1.5, -0.4], [-0.4, 0.8]])
    rng = np.random.default_rng(21)
    ours = inv_wishart_2d(6.0, S, 400_000, rng)
    ref = invwishart.rvs(df=6.0, scale=S, size=400_000, random_state=rng)
    np.testing.assert_allclose(ours.mean(axis=0), S / (6.0 - 3.0), rtol=0.02, atol=0.002)
    for i, j in [(0, 0), (0, 1), (1, 1)]:
        np.testing.assert_allclose(np.percentile(ours[:, i, j], [10, 50, 90]),
                                   np.percentile(ref[:, i, j], [10, 50, 90]), rtol=0.02, atol=0.002)
