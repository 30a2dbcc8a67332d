"""
Exploration mechanisms that plug into a policy-gradient learner at one of three
points: the reward the learner sees, the distribution actions are sampled
from, or the parameters of the acting network.
"""

from collections import Counter
from dataclasses import dataclass, field
from enum import StrEnum
from fractions import Fraction
from typing import Hashable, Literal

import numpy as np

from src.perturb_explore.errors import ConfigurationError, DensityError, UsageError
from src.perturb_explore.numerics import (
    AdamState,
    MlpNetwork,
    apply_adam,
    forward,
    softmax,
    squared_error,
)

Schedule = Literal["constant", "linear-decay"]
ShapeMode = Literal["off", "sporadic", "structured"]
EncoderKind = Literal["identity", "random-network"]
DensityDenominator = Literal["corrected", "original"]

# Added inside the square root of the count bonus so unseen states get 1/sqrt(delta).
COUNT_BONUS_DELTA = 0.01
# Positivity offset applied to logits before the multiplicative perturbation.
SHAPING_OFFSET = 1e-6


class ExploreKind(StrEnum):
    NONE = "none"
    SPORADIC_REWARDS = "sporadic-rewards"
    SPORADIC_SHAPING = "sporadic-shaping"
    STRUCTURED_SHAPING = "structured-shaping"
    COUNT_BONUS = "count-bonus"
    PREDICTION_BONUS = "prediction-bonus"
    PARAM_NOISE = "param-noise"


NOVELTY_KINDS = (ExploreKind.STRUCTURED_SHAPING, ExploreKind.PREDICTION_BONUS)


def _check_probability(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ConfigurationError(f"{name} must lie in [0, 1], got {value}")


def _schedule_factor(schedule: Schedule, progress: float) -> float:
    if schedule == "constant":
        return 1.0
    return max(0.0, 1.0 - progress)


@dataclass
class RewardPerturbConfig:
    """
    Sporadic reward bonus: with probability ``probability`` a step earns
    ``beta * eta`` on top of its extrinsic reward, ``eta ~ U[0, bonus_max]``.
    """

    probability: float = 0.5
    beta: float = 1.0
    bonus_max: float = 0.1
    schedule: Schedule = "constant"

    def __post_init__(self):
        _check_probability("probability", self.probability)
        if self.beta < 0:
            raise ConfigurationError(f"beta must be >= 0, got {self.beta}")
        if self.bonus_max <= 0:
            raise ConfigurationError(f"bonus_max must be > 0, got {self.bonus_max}")
        if self.schedule not in ("constant", "linear-decay"):
            raise ConfigurationError(f"Unknown schedule {self.schedule!r}")

    def beta_at(self, progress: float) -> float:
        return self.beta * _schedule_factor(self.schedule, progress)


@dataclass
class PolicyShapeConfig:
    mode: ShapeMode = "off"
    eta_max: float = 0.5
    apply_probability: float = 1.0

    def __post_init__(self):
        if self.mode not in ("off", "sporadic", "structured"):
            raise ConfigurationError(f"Unknown shaping mode {self.mode!r}")
        if self.eta_max <= 0:
            raise ConfigurationError(f"eta_max must be > 0, got {self.eta_max}")
        _check_probability("apply_probability", self.apply_probability)


@dataclass
class ExplorationConfig:
    """
    One exploration mechanism selected by ``kind`` and every parameter any
    mechanism reads. Fields a kind does not use are ignored.
    """

    kind: ExploreKind = ExploreKind.NONE
    probability: float = 0.5
    beta: float = 1.0
    bonus_max: float = 0.1
    schedule: Schedule = "constant"
    eta_max: float = 0.5
    apply_probability: float = 1.0
    decay_c: float = 1.0
    encoder: EncoderKind = "identity"
    feature_size: int = 16
    novelty_hidden: int = 32
    autoencoder_step_size: float = 1e-3
    forward_step_size: float = 1e-3
    sigma: float = 0.01
    density_denominator: DensityDenominator = "corrected"

    def __post_init__(self):
        try:
            self.kind = ExploreKind(self.kind)
        except ValueError:
            raise ConfigurationError(
                f"explore.kind must be one of {[k.value for k in ExploreKind]}, "
                f"got {self.kind!r}"
            )
        # Builds and validates the sub-configurations.
        self.reward_config()
        self.shape_config()
        if self.decay_c <= 0:
            raise ConfigurationError(f"decay_c must be > 0, got {self.decay_c}")
        if self.encoder not in ("identity", "random-network"):
            raise ConfigurationError(f"Unknown encoder {self.encoder!r}")
        if self.sigma < 0:
            raise ConfigurationError(f"sigma must be >= 0, got {self.sigma}")
        if self.density_denominator not in ("corrected", "original"):
            raise ConfigurationError(
                f"Unknown density_denominator {self.density_denominator!r}"
            )
        for name in ("feature_size", "novelty_hidden"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")

    def reward_config(self) -> RewardPerturbConfig:
        return RewardPerturbConfig(
            probability=self.probability,
            beta=self.beta,
            bonus_max=self.bonus_max,
            schedule=self.schedule,
        )

    def shape_config(self) -> PolicyShapeConfig:
        mode: ShapeMode = {
            ExploreKind.SPORADIC_SHAPING: "sporadic",
            ExploreKind.STRUCTURED_SHAPING: "structured",
        }.get(self.kind, "off")
        return PolicyShapeConfig(
            mode=mode, eta_max=self.eta_max, apply_probability=self.apply_probability
        )


# === Sporadic intrinsic rewards =======================================================
def perturb_reward(
    r_ext: float,
    cfg: RewardPerturbConfig,
    rng: np.random.Generator,
    progress: float = 0.0,
) -> float:
    """
    Add a random bonus to the extrinsic reward on a random subset of steps.

    Parameters
    ----------
    r_ext : float
        Extrinsic reward of the step.
    cfg : RewardPerturbConfig
        Probability, scale and range of the bonus.
    rng : np.random.Generator
        Draws ``nu ~ U[0, 1)`` and, when the bonus fires, ``eta``.
    progress : float
        Fraction of training completed, for the beta schedule.

    Returns
    -------
    float
        ``r_ext + beta * eta`` when ``nu >= 1 - p``, otherwise ``r_ext``.
    """
    nu = rng.random()
    if nu >= 1.0 - cfg.probability:
        return r_ext + cfg.beta_at(progress) * rng.uniform(0.0, cfg.bonus_max)
    return r_ext


def perturb_rewards(
    r_ext: np.ndarray,
    cfg: RewardPerturbConfig,
    rng: np.random.Generator,
    progress: float = 0.0,
) -> np.ndarray:
    """Vectorized `perturb_reward`; draws every nu first, then every eta."""
    r = np.asarray(r_ext, dtype=np.float64)
    fires = rng.random(r.shape) >= 1.0 - cfg.probability
    eta = rng.uniform(0.0, cfg.bonus_max, size=r.shape)
    return r + np.where(fires, cfg.beta_at(progress) * eta, 0.0)


# === Pseudo-counts ====================================================================
@dataclass
class CountModel:
    counts: Counter = field(default_factory=Counter)
    total: int = 0


def record_visit(model: CountModel, key: Hashable) -> CountModel:
    model.counts[key] += 1
    model.total += 1
    return model


def density_pair(
    model: CountModel, key: Hashable, denominator: DensityDenominator = "corrected"
) -> tuple[Fraction, Fraction]:
    """
    Empirical density of ``key`` before and after one more visit.

    The corrected form uses ``rho' = (N + 1) / (n + 1)``, the probability of
    ``key`` once the extra visit is recorded, under which the pseudo-count
    identity returns ``N`` exactly. ``denominator="original"`` keeps the
    shared denominator ``n`` for comparison runs.

    Values are exact fractions so the round trip through `pseudo_count` is
    free of round-off.
    """
    n = model.total
    if n == 0:
        raise DensityError("Density is undefined before any visit is recorded")
    count = model.counts.get(key, 0)
    rho = Fraction(count, n)
    if denominator == "original":
        return rho, Fraction(count + 1, n)
    return rho, Fraction(count + 1, n + 1)


def pseudo_count(
    rho: float | Fraction, rho_prime: float | Fraction
) -> float | Fraction:
    """
    ``N = rho (1 - rho') / (rho' - rho)``.

    Raises
    ------
    DensityError
        When ``rho' <= rho``; the ``rho = rho' = 1`` case (a history made of
        a single state) is reported as degenerate.
    """
    if rho_prime <= rho:
        if rho == 1 and rho_prime == 1:
            raise DensityError(
                "Degenerate density pair (1, 1): every visit was this state"
            )
        raise DensityError(f"rho' ({rho_prime}) must exceed rho ({rho})")
    return rho * (1 - rho_prime) / (rho_prime - rho)


def count_bonus(n: float, delta: float = COUNT_BONUS_DELTA) -> float:
    """``(N + delta) ** -0.5``"""
    if n < 0:
        raise ValueError(f"Pseudo-count must be >= 0, got {n}")
    return float((n + delta) ** -0.5)


def visit_bonus(
    model: CountModel,
    key: Hashable,
    denominator: DensityDenominator = "corrected",
    delta: float = COUNT_BONUS_DELTA,
) -> float:
    """
    Record a visit to ``key`` and return its count bonus.

    A degenerate density pair means every recorded visit was to ``key``, so
    the visit count itself is used. The uncorrected denominator can produce a
    negative pseudo-count, which is floored at zero.
    """
    record_visit(model, key)
    try:
        n = pseudo_count(*density_pair(model, key, denominator))
    except DensityError:
        n = model.counts[key]
    return count_bonus(max(float(n), 0.0), delta)


# === Novelty networks =================================================================
def state_action_input(
    states: np.ndarray, actions: np.ndarray, n_actions: int
) -> np.ndarray:
    """Concatenate state features with one-hot actions, row by row."""
    s = np.atleast_2d(np.asarray(states, dtype=np.float64))
    a = np.atleast_1d(np.asarray(actions, dtype=np.int64))
    return np.concatenate([s, np.eye(n_actions)[a]], axis=1)


@dataclass
class NoveltyModels:
    """
    The state-action autoencoder behind structured shaping and the forward
    model behind prediction bonuses, plus the (frozen) state encoder.
    """

    autoencoder: MlpNetwork
    autoencoder_adam: AdamState
    forward_model: MlpNetwork
    forward_adam: AdamState
    n_actions: int
    encoder: EncoderKind = "identity"
    encoder_net: MlpNetwork | None = None
    decay_c: float = 1.0
    global_step: int = 0

    @classmethod
    def create(
        cls,
        observation_size: int,
        n_actions: int,
        rng: np.random.Generator,
        encoder: EncoderKind = "identity",
        feature_size: int = 16,
        hidden_size: int = 32,
        decay_c: float = 1.0,
        autoencoder_step_size: float = 1e-3,
        forward_step_size: float = 1e-3,
    ) -> "NoveltyModels":
        encoder_net = None
        features = observation_size
        if encoder == "random-network":
            encoder_net = MlpNetwork.initialize(
                [observation_size, hidden_size, feature_size], rng
            )
            features = feature_size
        sa_size = observation_size + n_actions
        autoencoder = MlpNetwork.initialize([sa_size, hidden_size, sa_size], rng)
        forward_model = MlpNetwork.initialize(
            [features + n_actions, hidden_size, features], rng
        )
        return cls(
            autoencoder=autoencoder,
            autoencoder_adam=AdamState.for_parameters(
                autoencoder.parameters(), autoencoder_step_size
            ),
            forward_model=forward_model,
            forward_adam=AdamState.for_parameters(
                forward_model.parameters(), forward_step_size
            ),
            n_actions=n_actions,
            encoder=encoder,
            encoder_net=encoder_net,
            decay_c=decay_c,
        )

    def encode(self, observations: np.ndarray) -> np.ndarray:
        if self.encoder_net is None:
            return np.asarray(observations, dtype=np.float64)
        features, _ = forward(self.encoder_net, observations)
        return features

    def advance(self) -> int:
        self.global_step += 1
        return self.global_step


def reconstruction_errors(
    models: NoveltyModels, states: np.ndarray, actions: np.ndarray
) -> np.ndarray:
    x = state_action_input(states, actions, models.n_actions)
    out, _ = forward(models.autoencoder, x)
    return ((out - x) ** 2).sum(axis=1)


def train_autoencoder(models: NoveltyModels, s: np.ndarray, a: int) -> NoveltyModels:
    """One Adam step on ``||f_a(s_a) - s_a||^2`` for the pair ``(s, a)``."""
    x = state_action_input(s, np.array([a]), models.n_actions)
    _, gradients = squared_error(models.autoencoder, x, x)
    models.autoencoder, models.autoencoder_adam = apply_adam(
        models.autoencoder, gradients, models.autoencoder_adam
    )
    return models


def structured_epsilons(
    models: NoveltyModels, s: np.ndarray, n_actions: int
) -> np.ndarray:
    """
    Perturbation factors proportional to each action's reconstruction error.

    Parameters
    ----------
    models : NoveltyModels
        Holds the state-action autoencoder.
    s : np.ndarray
        One state ``(obs,)`` or a batch ``(k, obs)``.
    n_actions : int
        Number of actions, at least two.

    Returns
    -------
    np.ndarray
        ``e_a / sum(e)`` per action, shape ``(n_actions,)`` or
        ``(k, n_actions)``. Rows whose errors sum below 1e-12 are uniform.
    """
    if n_actions < 2:
        raise UsageError(f"Need at least two actions, got {n_actions}")
    states = np.atleast_2d(np.asarray(s, dtype=np.float64))
    k = states.shape[0]
    repeated = np.repeat(states, n_actions, axis=0)
    actions = np.tile(np.arange(n_actions), k)
    errors = reconstruction_errors(models, repeated, actions).reshape(k, n_actions)
    eps = error_ratios(errors)
    return eps if np.ndim(s) == 2 else eps[0]


def error_ratios(errors: np.ndarray) -> np.ndarray:
    """``e / sum(e)`` along the last axis; uniform where the sum is below 1e-12."""
    e = np.asarray(errors, dtype=np.float64)
    totals = e.sum(axis=-1, keepdims=True)
    uniform = np.full_like(e, 1.0 / e.shape[-1])
    return np.where(totals < 1e-12, uniform, e / np.maximum(totals, 1e-300))


def forward_model_pair(
    models: NoveltyModels, s: np.ndarray, a: int, s_next: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Forward-model input ``(phi(s), one-hot a)`` and target ``phi(s')``."""
    x = state_action_input(models.encode(s), np.array([a]), models.n_actions)
    return x, np.atleast_2d(models.encode(s_next))


def prediction_error(
    models: NoveltyModels, s: np.ndarray, a: int, s_next: np.ndarray
) -> float:
    x, target = forward_model_pair(models, s, a, s_next)
    return squared_error(models.forward_model, x, target)[0]


def prediction_bonus(
    models: NoveltyModels, s: np.ndarray, a: int, s_next: np.ndarray
) -> float:
    """
    ``e / (t * C)`` for the transition, then one Adam step of the forward model
    toward the encoded next state.

    Call `NoveltyModels.advance` first; ``t`` must be at least 1.
    """
    t = models.global_step
    if t < 1:
        raise UsageError("prediction_bonus needs global_step >= 1; call advance()")
    x, target = forward_model_pair(models, s, a, s_next)
    error, gradients = squared_error(models.forward_model, x, target)
    bonus = error / (t * models.decay_c)
    models.forward_model, models.forward_adam = apply_adam(
        models.forward_model, gradients, models.forward_adam
    )
    return bonus


# === Policy shaping ===================================================================
def sporadic_epsilons(
    n_actions: int, eta_max: float, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """Independent ``U(0, eta_max)`` factors, one per action (per row if ``size``)."""
    if n_actions < 2:
        raise UsageError(f"Need at least two actions, got {n_actions}")
    if eta_max <= 0:
        raise UsageError(f"eta_max must be > 0, got {eta_max}")
    shape = (n_actions,) if size is None else (size, n_actions)
    return rng.uniform(0.0, eta_max, size=shape)


def shape_logits(logits: np.ndarray, epsilons: np.ndarray) -> np.ndarray:
    """
    Behaviour distribution from pre-softmax outputs and perturbation factors.

    The logits are shifted to be strictly positive, multiplied by
    ``1 + epsilon``, normalized to sum to one, and passed through softmax.
    Works on the last axis of batched inputs.
    """
    z = np.asarray(logits, dtype=np.float64)
    eps = np.asarray(epsilons, dtype=np.float64)
    if z.shape != eps.shape:
        raise UsageError(f"logits {z.shape} and epsilons {eps.shape} differ in shape")
    if np.any(eps < 0):
        raise UsageError("Perturbation factors must be non-negative")
    positive = z - z.min(axis=-1, keepdims=True) + SHAPING_OFFSET
    scaled = positive * (1.0 + eps)
    normalized = scaled / scaled.sum(axis=-1, keepdims=True)
    return softmax(normalized)


# === Parameter noise ==================================================================
def perturb_parameters(
    net: MlpNetwork, sigma: float, rng: np.random.Generator
) -> MlpNetwork:
    """A copy of ``net`` with ``N(0, sigma^2)`` noise on every parameter."""
    if sigma < 0:
        raise UsageError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return net.copy()
    return net.with_parameters(
        [p + rng.normal(0.0, sigma, size=p.shape) for p in net.parameters()]
    )


# === Per-run exploration state ========================================================
@dataclass
class ExplorationState:
    """Mutable exploration models owned by the single learner of a run."""

    config: ExplorationConfig
    rng: np.random.Generator
    count_model: CountModel = field(default_factory=CountModel)
    novelty: NoveltyModels | None = None

    @classmethod
    def create(
        cls,
        config: ExplorationConfig,
        observation_size: int,
        n_actions: int,
        rng: np.random.Generator,
    ) -> "ExplorationState":
        novelty = None
        if config.kind in NOVELTY_KINDS:
            novelty = NoveltyModels.create(
                observation_size,
                n_actions,
                rng,
                encoder=config.encoder,
                feature_size=config.feature_size,
                hidden_size=config.novelty_hidden,
                decay_c=config.decay_c,
                autoencoder_step_size=config.autoencoder_step_size,
                forward_step_size=config.forward_step_size,
            )
        return cls(config=config, rng=rng, novelty=novelty)
