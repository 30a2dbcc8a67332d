from dataclasses import dataclass

import numpy as np

from src.perturb_explore.errors import ConfigurationError, NumericalError
from src.perturb_explore.exploration import (
    NoveltyModels,
    PolicyShapeConfig,
    shape_logits,
    sporadic_epsilons,
    structured_epsilons,
)
from src.perturb_explore.numerics import (
    Activation,
    AdamState,
    MlpNetwork,
    forward,
    log_softmax,
    softmax,
)


@dataclass
class ActorCritic:
    """Separate policy and value networks, each with its own Adam state."""

    policy: MlpNetwork
    value: MlpNetwork
    policy_adam: AdamState
    value_adam: AdamState

    @classmethod
    def create(
        cls,
        observation_size: int,
        n_actions: int,
        hidden: tuple[int, ...],
        rng: np.random.Generator,
        step_size: float,
        activation: Activation = "tanh",
    ) -> "ActorCritic":
        policy = MlpNetwork.initialize(
            [observation_size, *hidden, n_actions], rng, activation
        )
        value = MlpNetwork.initialize([observation_size, *hidden, 1], rng, activation)
        return cls(
            policy=policy,
            value=value,
            policy_adam=AdamState.for_parameters(policy.parameters(), step_size),
            value_adam=AdamState.for_parameters(value.parameters(), step_size),
        )


@dataclass
class Batch:
    """Flat, time-major training samples taken from a rollout."""

    observations: np.ndarray
    actions: np.ndarray
    behavior_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)

    def take(self, indices: np.ndarray) -> "Batch":
        return Batch(
            observations=self.observations[indices],
            actions=self.actions[indices],
            behavior_log_probs=self.behavior_log_probs[indices],
            advantages=self.advantages[indices],
            returns=self.returns[indices],
        )


@dataclass
class ActionBatch:
    actions: np.ndarray
    behavior_log_probs: np.ndarray
    values: np.ndarray
    epsilons: np.ndarray
    shaped: np.ndarray


def behavior_distribution(
    logits: np.ndarray, epsilons: np.ndarray, shaped: np.ndarray
) -> np.ndarray:
    """Shaped distribution on rows flagged ``shaped``, plain softmax elsewhere."""
    z = np.atleast_2d(logits)
    plain = softmax(z)
    if not np.any(shaped):
        return plain
    return np.where(np.asarray(shaped)[:, None], shape_logits(z, epsilons), plain)


def act(
    policy_net: MlpNetwork,
    value_net: MlpNetwork,
    observations: np.ndarray,
    shape_cfg: PolicyShapeConfig,
    novelty: NoveltyModels | None,
    rng: np.random.Generator,
    deterministic: bool = False,
    forced_epsilons: np.ndarray | None = None,
) -> ActionBatch:
    """
    Pick one action per observation row.

    Parameters
    ----------
    policy_net, value_net : MlpNetwork
        Networks producing the logits and the state values.
    observations : np.ndarray
        Shape ``(n, observation_size)``.
    shape_cfg : PolicyShapeConfig
        ``off`` samples from ``softmax(logits)``, not from `shape_logits`
        with zero factors (all-equal factors match the latter); ``sporadic`` and
        ``structured`` sample from `shape_logits` with random or
        reconstruction-error factors on a fraction ``apply_probability`` of
        the rows.
    novelty : NoveltyModels or None
        Required for structured shaping.
    rng : np.random.Generator
        Draws the factors, the apply mask and the actions, in that order.
    deterministic : bool
        Greedy action on the unshaped logits, no random draws.
    forced_epsilons : np.ndarray, optional
        Use these factors on every row instead of drawing them.

    Returns
    -------
    ActionBatch
        Actions, the log-probability of each under the distribution it was
        actually drawn from, values, factors and the shaped mask.
    """
    obs = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    logits, _ = forward(policy_net, obs)
    values = forward(value_net, obs)[0][:, 0]
    n, n_actions = logits.shape
    eps = np.zeros((n, n_actions))
    shaped = np.zeros(n, dtype=bool)

    if deterministic:
        actions = np.argmax(logits, axis=1)
        log_probs = log_softmax(logits)[np.arange(n), actions]
        return ActionBatch(actions, log_probs, values, eps, shaped)

    if forced_epsilons is not None:
        forced = np.asarray(forced_epsilons, dtype=np.float64)
        eps = np.broadcast_to(forced, eps.shape).copy()
        shaped[:] = True
    elif shape_cfg.mode != "off":
        if shape_cfg.mode == "sporadic":
            eps = sporadic_epsilons(n_actions, shape_cfg.eta_max, rng, size=n)
        else:
            if novelty is None:
                raise ConfigurationError("Structured shaping needs novelty models")
            eps = structured_epsilons(novelty, obs, n_actions)
        if shape_cfg.apply_probability < 1.0:
            shaped = rng.random(n) < shape_cfg.apply_probability
            eps = np.where(shaped[:, None], eps, 0.0)
        else:
            shaped[:] = True

    probs = behavior_distribution(logits, eps, shaped)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(n)
    actions = np.minimum((cdf < u[:, None]).sum(axis=1), n_actions - 1)
    log_probs = np.log(probs[np.arange(n), actions])
    return ActionBatch(actions, log_probs, values, eps, shaped)


@dataclass
class PolicyTerms:
    """Per-sample policy quantities shared by the PPO and A2C losses."""

    log_probs: np.ndarray
    probs: np.ndarray
    taken_log_probs: np.ndarray
    entropy: np.ndarray
    one_hot: np.ndarray

    @classmethod
    def evaluate(cls, logits: np.ndarray, actions: np.ndarray) -> "PolicyTerms":
        log_probs = log_softmax(logits)
        probs = np.exp(log_probs)
        n = logits.shape[0]
        one_hot = np.zeros_like(logits)
        one_hot[np.arange(n), actions] = 1.0
        return cls(
            log_probs=log_probs,
            probs=probs,
            taken_log_probs=log_probs[np.arange(n), actions],
            entropy=-(probs * log_probs).sum(axis=1),
            one_hot=one_hot,
        )

    def taken_log_prob_gradient(self, coefficients: np.ndarray) -> np.ndarray:
        """d/dlogits of ``sum_b c_b log pi(a_b | s_b)``."""
        return coefficients[:, None] * (self.one_hot - self.probs)

    def entropy_gradient(self) -> np.ndarray:
        """d/dlogits of ``sum_b H_b``."""
        return -self.probs * (self.log_probs + self.entropy[:, None])


def value_predictions(value_net: MlpNetwork, observations: np.ndarray):
    out, cache = forward(value_net, observations)
    return out[:, 0], cache


def check_finite_loss(name: str, terms: dict[str, float]) -> None:
    if not all(np.isfinite(v) for v in terms.values()):
        details = ", ".join(f"{k}={v}" for k, v in terms.items())
        raise NumericalError(f"Non-finite {name} loss ({details}); update rejected")
