import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import smoothed_marginals_enumeration
from rbal.decision import DO_NOTHING, REPAIR
from rbal.gmm import NiwPrior, class_log_densities, fit_supervised
from rbal.smoothing import (EvidenceConflictError, SmoothingInterval, pseudo_labels, smooth_interval,
                            smooth_log_likelihoods)


def random_transitions(rng, A, K, sparsity=0.3):
    T = rng.random((A, K, K)) * (rng.random((A, K, K)) > sparsity)
    T[:, np.arange(K), np.arange(K)] += 0.05      # every row keeps some mass
    return T / T.sum(axis=2, keepdims=True)


def test_random_intervals_match_enumeration():
    rng = np.random.default_rng(2024)
    K = 4
    checked = 0
    for _ in range(200):
        T = random_transitions(rng, 2, K)
        m = int(rng.integers(0, 6))                # interval length m + 1 <= 6
        lik = rng.random((m, K)) * (rng.random((m, K)) > 0.2)
        d = rng.integers(0, 2, m + 1)
        y_a, y_b = (int(v) for v in rng.integers(1, K + 1, 2))
        ref = smoothed_marginals_enumeration(y_a, y_b, lik, d.tolist(), T.tolist())
        with np.errstate(divide="ignore"):
            ll = np.log(lik)
        if ref is None:
            with pytest.raises(EvidenceConflictError):
                smooth_log_likelihoods(y_a, y_b, ll, d, T)
            continue
        out = smooth_log_likelihoods(y_a, y_b, ll, d, T)
        np.testing.assert_allclose(out, ref, atol=1e-10, rtol=0)
        checked += 1
    assert checked > 100


def test_undamaged_chain_is_certain(synthetic_process):
    rng = np.random.default_rng(0)
    ll = rng.normal(size=(5, 4))
    d = np.full(6, DO_NOTHING)
    out = smooth_log_likelihoods(1, 1, ll, d, synthetic_process.transitions)
    np.testing.assert_array_equal(out, np.tile([1.0, 0.0, 0.0, 0.0], (5, 1)))


def test_undamaged_chain_through_classifier(synthetic_process):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 2))
    post = fit_supervised(X, rng.integers(1, 5, 40), NiwPrior.default(2), K=4)
    iv = SmoothingInterval(1, 1, rng.normal(size=(3, 2)), [DO_NOTHING] * 4)
    out = smooth_interval(iv, post, synthetic_process)
    np.testing.assert_array_equal(pseudo_labels(out), [1, 1, 1])
    np.testing.assert_allclose(out[:, 0], 1.0, atol=0)


def test_conflict_reports_first_step(synthetic_process):
    # the do-nothing chain cannot recover from failure, so 4 -> 1 is impossible
    ll = np.zeros((3, 4))
    with pytest.raises(EvidenceConflictError) as err:
        smooth_log_likelihoods(4, 1, ll, [DO_NOTHING] * 4, synthetic_process.transitions, t0=10)
    assert err.value.t == 11


def test_repair_allows_recovery(synthetic_process):
    ll = np.zeros((2, 4))
    out = smooth_log_likelihoods(4, 1, ll, [REPAIR, DO_NOTHING, DO_NOTHING], synthetic_process.transitions)
    np.testing.assert_allclose(out.sum(axis=1), 1.0)
    assert out[0].argmax() == 0


def test_adjacent_inspections_have_no_intermediates(synthetic_process):
    out = smooth_log_likelihoods(1, 2, np.empty((0, 4)), [DO_NOTHING], synthetic_process.transitions)
    assert out.shape == (0, 4)
    assert pseudo_labels(out).shape == (0,)


def test_long_interval_does_not_underflow(synthetic_process):
    rng = np.random.default_rng(3)
    ll = rng.normal(size=(2000, 4)) - 400.0
    out = smooth_log_likelihoods(1, 4, ll, np.zeros(2001, int), synthetic_process.transitions)
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out.sum(axis=1), 1.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(1, 5))
def test_marginals_are_distributions(seed, m):
    rng = np.random.default_rng(seed)
    T = random_transitions(rng, 2, 3, sparsity=0.0)
    out = smooth_log_likelihoods(int(rng.integers(1, 4)), int(rng.integers(1, 4)),
                                 rng.normal(size=(m, 3)), rng.integers(0, 2, m + 1), T)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(out >= 0)


def test_interval_validation():
    with pytest.raises(ValueError):
        SmoothingInterval(1, 2, np.zeros((2, 2)), [0, 0])
    with pytest.raises(ValueError):
        SmoothingInterval(1, 2, np.zeros((0, 2)), [])
    with pytest.raises(ValueError):
        smooth_log_likelihoods(1, 1, np.zeros((2, 4)), [0, 0], np.tile(np.eye(4), (2, 1, 1)))


def test_pseudo_label_ties_go_low():
    np.testing.assert_array_equal(pseudo_labels([[0.5, 0.5, 0.0], [0.2, 0.4, 0.4]]), [1, 2])
