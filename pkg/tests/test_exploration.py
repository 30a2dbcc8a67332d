import copy
from fractions import Fraction

import numpy as np
import pytest

from src.perturb_explore.errors import ConfigurationError, DensityError, UsageError
from src.perturb_explore.exploration import (
    CountModel,
    ExplorationConfig,
    ExplorationState,
    ExploreKind,
    NoveltyModels,
    RewardPerturbConfig,
    count_bonus,
    density_pair,
    error_ratios,
    perturb_parameters,
    perturb_reward,
    perturb_rewards,
    prediction_bonus,
    prediction_error,
    pseudo_count,
    reconstruction_errors,
    record_visit,
    shape_logits,
    sporadic_epsilons,
    structured_epsilons,
    train_autoencoder,
    visit_bonus,
)
from src.perturb_explore.numerics import MlpNetwork, softmax


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


# === Sporadic rewards =================================================================
@pytest.mark.parametrize(
    "probability, beta, fires",
    [(1.0, 1.0, True), (0.0, 1.0, False), (1.0, 0.0, False)],
)
def test_perturb_reward_extremes(probability, beta, fires, rng):
    cfg = RewardPerturbConfig(probability=probability, beta=beta, bonus_max=0.1)
    rewards = [perturb_reward(1.0, cfg, rng) for _ in range(200)]
    if fires:
        assert all(1.0 <= r <= 1.1 for r in rewards)
        assert any(r > 1.0 for r in rewards)
    else:
        assert rewards == [1.0] * 200


def test_perturb_rewards_statistics(rng):
    bonus = perturb_rewards(np.zeros(200_000), RewardPerturbConfig(0.25, 2.0, 0.1), rng)
    assert (bonus > 0).mean() == pytest.approx(0.25, abs=0.01)
    assert bonus.max() <= 0.2
    # E[bonus] = p * beta * bonus_max / 2
    assert bonus.mean() == pytest.approx(0.025, abs=0.001)


def test_beta_linear_decay():
    cfg = RewardPerturbConfig(beta=2.0, schedule="linear-decay")
    assert cfg.beta_at(0.0) == 2.0
    assert cfg.beta_at(0.75) == pytest.approx(0.5)
    assert cfg.beta_at(1.5) == 0.0
    assert RewardPerturbConfig(beta=2.0).beta_at(0.75) == 2.0


@pytest.mark.parametrize(
    "kwargs",
    [
        {"probability": 1.5},
        {"probability": -0.1},
        {"beta": -1.0},
        {"bonus_max": 0.0},
        {"schedule": "cosine"},
    ],
)
def test_reward_config_rejects(kwargs):
    with pytest.raises(ConfigurationError):
        RewardPerturbConfig(**kwargs)


# === Pseudo-counts ====================================================================
def test_density_before_any_visit():
    with pytest.raises(DensityError):
        density_pair(CountModel(), "s")


@pytest.mark.parametrize(
    "history",
    [
        ["a", "b"],
        ["a", "a", "b", "c", "a"],
        ["x"] * 3 + ["y"] * 97,
    ],
)
def test_pseudo_count_recovers_visits(history):
    model = CountModel()
    for key in history:
        record_visit(model, key)
    for key in set(history) | {"unseen"}:
        n = pseudo_count(*density_pair(model, key))
        assert isinstance(n, Fraction)
        assert n == history.count(key)


def test_pseudo_count_degenerate_pair():
    model = record_visit(CountModel(), "only")
    assert density_pair(model, "only") == (1, 1)
    with pytest.raises(DensityError):
        pseudo_count(*density_pair(model, "only"))


def test_original_denominator():
    model = CountModel()
    for key in ["a", "b", "b", "c"]:
        record_visit(model, key)
    assert density_pair(model, "b", "original") == (Fraction(1, 2), Fraction(3, 4))


def test_count_bonus():
    assert count_bonus(0) == pytest.approx(10.0)
    assert count_bonus(99.99) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        count_bonus(-1)


def test_visit_bonus_decreases_with_visits():
    model = CountModel()
    record_visit(model, "other")
    bonuses = [visit_bonus(model, "s") for _ in range(5)]
    assert bonuses == pytest.approx([count_bonus(n) for n in range(1, 6)])
    assert model.counts["s"] == 5
    assert model.total == 6


def test_visit_bonus_single_state_history():
    model = CountModel()
    assert visit_bonus(model, "s") == pytest.approx(count_bonus(1))
    # The uncorrected pair gives a negative pseudo-count here.
    assert visit_bonus(CountModel(), "s", "original") == pytest.approx(count_bonus(0))


# === Policy shaping ===================================================================
def test_sporadic_epsilons_range(rng):
    eps = sporadic_epsilons(4, 0.5, rng, size=1000)
    assert eps.shape == (1000, 4)
    assert eps.min() >= 0.0 and eps.max() < 0.5
    with pytest.raises(UsageError):
        sporadic_epsilons(1, 0.5, rng)


def test_shape_logits_is_distribution(rng):
    logits = rng.normal(scale=5.0, size=(20, 6))
    eps = sporadic_epsilons(6, 0.5, rng, size=20)
    p = shape_logits(logits, eps)
    assert np.all(p > 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0)


def test_shape_logits_uniform_factor_cancels(rng):
    logits = rng.normal(size=5)
    np.testing.assert_allclose(
        shape_logits(logits, np.full(5, 0.3)),
        shape_logits(logits, np.zeros(5)),
        atol=1e-12,
    )


def test_shape_logits_keeps_ranking_without_noise():
    logits = np.array([0.2, -1.0, 3.0, 0.5])
    p = shape_logits(logits, np.zeros(4))
    assert np.argsort(p).tolist() == np.argsort(logits).tolist()
    # Normalizing before the softmax keeps the shaped policy close to uniform.
    assert p.max() < softmax(logits).max()


def test_shape_logits_rejects(rng):
    with pytest.raises(UsageError):
        shape_logits(np.zeros(3), np.zeros(4))
    with pytest.raises(UsageError):
        shape_logits(np.zeros(3), np.array([0.1, -0.1, 0.0]))


def test_error_ratios():
    np.testing.assert_allclose(error_ratios(np.array([1.0, 3.0])), [0.25, 0.75])
    np.testing.assert_allclose(error_ratios(np.zeros(4)), [0.25] * 4)


@pytest.fixture
def novelty(rng) -> NoveltyModels:
    return NoveltyModels.create(3, 2, rng, autoencoder_step_size=1e-2)


def test_structured_epsilons_shapes(novelty, rng):
    single = structured_epsilons(novelty, rng.normal(size=3), 2)
    assert single.shape == (2,)
    assert single.sum() == pytest.approx(1.0)
    batch = structured_epsilons(novelty, rng.normal(size=(7, 3)), 2)
    assert batch.shape == (7, 2)
    np.testing.assert_allclose(batch.sum(axis=1), 1.0)
    with pytest.raises(UsageError):
        structured_epsilons(novelty, rng.normal(size=3), 1)


def test_trained_action_gets_smallest_factor(novelty, rng):
    s = rng.normal(size=3)
    for _ in range(500):
        train_autoencoder(novelty, s, 1)
    eps = structured_epsilons(novelty, s, 2)
    assert eps[1] < eps[0]


def test_autoencoder_converges_on_one_pair(novelty, rng):
    s = rng.normal(size=3)
    initial = reconstruction_errors(novelty, s, np.array([0]))[0]
    for _ in range(1000):
        train_autoencoder(novelty, s, 0)
    assert reconstruction_errors(novelty, s, np.array([0]))[0] < 0.1 * initial


# === Prediction bonus =================================================================
def test_prediction_bonus_needs_step(novelty):
    with pytest.raises(UsageError):
        prediction_bonus(novelty, np.zeros(3), 0, np.ones(3))


def test_prediction_bonus_decays_on_repeated_transition(rng):
    models = NoveltyModels.create(3, 2, rng, forward_step_size=1e-2, decay_c=2.0)
    s, s_next = rng.normal(size=3), rng.normal(size=3)
    error = prediction_error(models, s, 0, s_next)
    models.advance()
    first = prediction_bonus(models, s, 0, s_next)
    assert first == pytest.approx(error / 2.0)
    for _ in range(200):
        models.advance()
        last = prediction_bonus(models, s, 0, s_next)
    assert last < first
    assert prediction_error(models, s, 0, s_next) < error


def test_prediction_bonus_scales_with_inverse_step(rng):
    models = NoveltyModels.create(3, 2, rng, decay_c=2.0)
    s, s_next = rng.normal(size=3), rng.normal(size=3)
    early, late = copy.deepcopy(models), copy.deepcopy(models)
    early.global_step, late.global_step = 7, 14
    assert prediction_bonus(late, s, 1, s_next) == pytest.approx(
        prediction_bonus(early, s, 1, s_next) / 2
    )


def test_prediction_bonus_falls_tenfold_over_500_steps(rng):
    models = NoveltyModels.create(3, 2, rng, forward_step_size=1e-2)
    s, s_next = rng.normal(size=3), rng.normal(size=3)
    models.advance()
    first = prediction_bonus(models, s, 0, s_next)
    for _ in range(499):
        models.advance()
        last = prediction_bonus(models, s, 0, s_next)
    assert last <= first / 10


def test_random_network_encoder(rng):
    models = NoveltyModels.create(5, 3, rng, encoder="random-network", feature_size=4)
    assert models.encode(rng.normal(size=(2, 5))).shape == (2, 4)
    assert models.forward_model.layer_sizes[0] == 4 + 3


# === Parameter noise ==================================================================
def test_perturb_parameters(rng):
    net = MlpNetwork.initialize([3, 4, 2], rng)
    same = perturb_parameters(net, 0.0, rng)
    assert same is not net
    for p, q in zip(net.parameters(), same.parameters()):
        np.testing.assert_array_equal(p, q)
    noisy = perturb_parameters(net, 0.1, rng)
    deltas = np.concatenate(
        [(q - p).ravel() for p, q in zip(net.parameters(), noisy.parameters())]
    )
    assert 0.05 < deltas.std() < 0.2
    with pytest.raises(UsageError):
        perturb_parameters(net, -1.0, rng)


# === Configuration ====================================================================
@pytest.mark.parametrize(
    "kind, mode",
    [
        ("none", "off"),
        ("sporadic-rewards", "off"),
        ("sporadic-shaping", "sporadic"),
        ("structured-shaping", "structured"),
        ("param-noise", "off"),
    ],
)
def test_shape_mode_follows_kind(kind, mode):
    cfg = ExplorationConfig(kind=kind)
    assert cfg.kind == ExploreKind(kind)
    assert cfg.shape_config().mode == mode


@pytest.mark.parametrize(
    "kwargs",
    [
        {"kind": "curiosity"},
        {"eta_max": 0.0},
        {"apply_probability": 2.0},
        {"decay_c": 0.0},
        {"encoder": "cnn"},
        {"sigma": -0.1},
        {"density_denominator": "other"},
        {"feature_size": 0},
    ],
)
def test_exploration_config_rejects(kwargs):
    with pytest.raises(ConfigurationError):
        ExplorationConfig(**kwargs)


@pytest.mark.parametrize(
    "kind, has_novelty",
    [
        ("none", False),
        ("count-bonus", False),
        ("structured-shaping", True),
        ("prediction-bonus", True),
    ],
)
def test_exploration_state(kind, has_novelty, rng):
    state = ExplorationState.create(ExplorationConfig(kind=kind), 4, 2, rng)
    assert (state.novelty is not None) == has_novelty
    assert state.count_model.total == 0
