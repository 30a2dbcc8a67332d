import numpy as np
import pytest

from src.perturb_explore.verification import (
    CHECKS,
    check_gae,
    check_gradients,
    check_pseudo_counts,
    check_shaping,
    check_sporadic_rewards,
    check_structured_epsilons,
    gae_by_summation,
    verify,
)


def test_gradients():
    result = check_gradients(batch_size=4, max_coordinates=200)
    assert result.passed, result.detail
    for name in ("ppo policy", "a2c value", "autoencoder", "forward model"):
        assert name in result.detail


def test_gradients_fail_on_impossible_tolerance():
    assert not check_gradients(batch_size=4, max_coordinates=50, tolerance=0.0).passed


def test_pseudo_counts():
    result = check_pseudo_counts(n_sequences=20, max_visits=200)
    assert result.passed, result.detail


def test_shaping():
    assert check_shaping(n_pairs=500).passed


def test_structured_epsilons():
    result = check_structured_epsilons(repetitions=5)
    assert result.passed, result.detail


def test_sporadic_rewards():
    result = check_sporadic_rewards()
    assert result.passed, result.detail


def test_gae():
    assert check_gae(n_rollouts=100).passed


def test_gae_by_summation_stops_at_episode_end():
    rewards = np.array([1.0, 1.0, 1.0])
    zeros = np.zeros(3)
    terminated = np.array([False, True, False])
    advantages = gae_by_summation(
        rewards, zeros, zeros, terminated, np.zeros(3, dtype=bool), 0.5, 1.0
    )
    np.testing.assert_allclose(advantages, [1.5, 1.0, 1.0])


def test_verify_runs_named_checks():
    results = verify(["gae"])
    assert [r.name for r in results] == ["gae"]
    assert results[0].seconds > 0


@pytest.mark.slow
def test_full_suite():
    results = verify()
    assert len(results) == len(CHECKS)
    assert all(r.passed for r in results), [r.detail for r in results if not r.passed]
