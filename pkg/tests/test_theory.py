from __future__ import annotations

import math

import numpy as np
import pytest

from epicode.errors import ValidationError
from epicode.rng import substream
from epicode.theory import (
    ErrorScenario,
    TrueTask,
    argmax_flip_rate,
    cd_error,
    estimate_error_std,
    predicted_error_std,
    sample_error_pair,
    _sample_error_block,
)


def scenario(**kw):
    base = dict(epsilon=1.0, k=2.0, lam=0.5, rho=0.0, vocab_size=4, trials=1000, seed=0)
    base.update(kw)
    return ErrorScenario(**base)


def test_scenario_validation():
    with pytest.raises(ValidationError):
        scenario(epsilon=0.0)
    with pytest.raises(ValidationError):
        scenario(k=1.0)
    with pytest.raises(ValidationError):
        scenario(rho=1.5)
    with pytest.raises(ValidationError):
        scenario(vocab_size=1)


def test_rho_one_weak_is_exact_multiple():
    sc = scenario(rho=1.0)
    ds, dw = sample_error_pair(sc, substream(0, 1))
    np.testing.assert_array_equal(dw, sc.k * ds)


def test_rho_zero_correlation_near_zero():
    sc = scenario(rho=0.0, trials=1_000_000, vocab_size=2)
    ds, dw = _sample_error_block(sc, substream(3, 0), 1_000_000)
    corr = np.corrcoef(ds[:, 0], dw[:, 0])[0, 1]
    assert abs(corr) < 0.005


@pytest.mark.parametrize("rho", [0.0, 0.3, 0.7, 1.0])
def test_weak_std_is_k_epsilon(rho):
    sc = scenario(rho=rho, k=2.5, trials=1_000_000, vocab_size=2)
    _, dw = _sample_error_block(sc, substream(4, 0), 1_000_000)
    assert np.std(dw[:, 0]) == pytest.approx(sc.k * sc.epsilon, rel=0.01)


def test_cd_error_lambda_zero_identity():
    ds = np.array([1.0, -2.0, 3.0])
    dw = np.array([5.0, 5.0, 5.0])
    np.testing.assert_array_equal(cd_error(ds, dw, 0.0), ds)


def test_cd_error_hand_values():
    assert cd_error([1.0], [2.0], 1.0)[0] == pytest.approx(0.0)
    assert cd_error([1.0], [-1.0], 0.5)[0] == pytest.approx(2.0)


def test_cd_error_length_mismatch():
    with pytest.raises(ValidationError):
        cd_error([1.0, 2.0], [1.0], 0.5)


def test_exact_cancellation_is_identically_zero():
    sc = scenario(rho=1.0, lam=1.0, k=2.0, trials=10_000)
    assert estimate_error_std(sc) == 0.0


def test_correlated_bound_half():
    sc = scenario(rho=1.0, lam=0.5, k=2.0, trials=1_000_000, vocab_size=2)
    assert estimate_error_std(sc) == pytest.approx(0.5, rel=0.01)


def test_independent_variance():
    sc = scenario(rho=0.0, lam=0.5, k=2.0, trials=1_000_000, vocab_size=2)
    assert estimate_error_std(sc) == pytest.approx(math.sqrt(3.25), rel=0.01)


def test_lambda_zero_estimate_matches_strong_std():
    for rho in (0.0, 1.0):
        sc = scenario(rho=rho, lam=0.0, trials=200_000, vocab_size=2)
        assert estimate_error_std(sc) == pytest.approx(1.0, rel=0.01)


def test_monotone_in_k_for_correlated_case():
    # larger weak/strong gap lowers the correlated bound while lam*(k-1) < 1
    stds = [
        estimate_error_std(scenario(rho=1.0, lam=0.4, k=k, trials=100_000))
        for k in (1.5, 2.0, 2.5, 3.0)
    ]
    assert all(a > b for a, b in zip(stds, stds[1:]))


def test_predicted_std_endpoints():
    assert predicted_error_std(scenario(rho=1.0, lam=0.5, k=2.0)) == pytest.approx(0.5)
    assert predicted_error_std(scenario(rho=1.0, lam=1.0, k=2.0)) == pytest.approx(0.0)
    assert predicted_error_std(scenario(rho=0.0, lam=0.5, k=2.0)) == pytest.approx(math.sqrt(3.25))


def test_partial_correlation_matches_closed_form():
    sc = scenario(rho=0.6, lam=0.8, k=3.0, trials=1_000_000, vocab_size=2)
    assert estimate_error_std(sc) == pytest.approx(predicted_error_std(sc), rel=0.01)


def test_estimate_is_deterministic_and_seed_sensitive():
    sc = scenario(trials=50_000)
    assert estimate_error_std(sc) == estimate_error_std(sc)
    assert estimate_error_std(sc) != estimate_error_std(scenario(trials=50_000, seed=1))


def test_block_partition_does_not_change_estimate():
    # crossing the 65536-trial block boundary keeps accumulation in block order
    a = estimate_error_std(scenario(trials=(1 << 16) + 500))
    assert a == pytest.approx(1.0 * predicted_error_std(scenario()), rel=0.05)


def test_flip_rate_vanishing_noise():
    sc = scenario(epsilon=1e-9, rho=0.0, lam=1.0, trials=10_000, vocab_size=8)
    task = TrueTask(np.array([1.0, 0, 0, 0, 0, 0, 0, 0]))
    rate_cd, rate_strong = argmax_flip_rate(sc, task)
    assert rate_cd == 0.0 and rate_strong == 0.0


def test_flip_rate_exact_cancellation():
    sc = scenario(rho=1.0, lam=1.0, k=2.0, trials=50_000, vocab_size=8)
    task = TrueTask(np.array([1.0, 0, 0, 0, 0, 0, 0, 0]))
    rate_cd, rate_strong = argmax_flip_rate(sc, task)
    assert rate_cd == 0.0
    assert rate_strong > 0.0


def test_flip_rate_independent_errors_hurt():
    sc = scenario(rho=0.0, lam=1.0, k=2.0, trials=100_000, vocab_size=8)
    task = TrueTask(np.array([1.0, 0, 0, 0, 0, 0, 0, 0]))
    rate_cd, rate_strong = argmax_flip_rate(sc, task)
    assert rate_cd > rate_strong


def test_flip_rate_task_length_must_match():
    sc = scenario(vocab_size=4)
    with pytest.raises(ValidationError):
        argmax_flip_rate(sc, TrueTask(np.zeros(8)))
