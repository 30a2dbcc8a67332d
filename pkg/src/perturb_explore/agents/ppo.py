from dataclasses import dataclass, field, replace

import numpy as np

from src.perturb_explore.agents.actor_critic import (
    ActorCritic,
    Batch,
    PolicyTerms,
    check_finite_loss,
    value_predictions,
)
from src.perturb_explore.agents.rollout import Rollout
from src.perturb_explore.errors import ConfigurationError
from src.perturb_explore.numerics import (
    Activation,
    MlpNetwork,
    apply_adam,
    backward,
    forward,
)

ADVANTAGE_STD_FLOOR = 1e-8
STAT_NAMES = (
    "total",
    "policy_loss",
    "value_loss",
    "entropy",
    "approx_kl",
    "clip_fraction",
)


@dataclass
class PpoConfig:
    """
    Clipped-surrogate PPO. ``step_size`` and ``clip`` are multiplied by
    ``alpha = 1 - progress`` when ``anneal`` is on.
    """

    horizon: int = 128
    step_size: float = 2.5e-4
    epochs: int = 4
    n_minibatches: int = 4
    gamma: float = 0.99
    lam: float = 0.95
    n_actors: int = 8
    clip: float = 0.1
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    anneal: bool = True
    hidden: tuple[int, ...] = field(default_factory=lambda: (64, 64))
    activation: Activation = "tanh"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        for name in ("horizon", "epochs", "n_minibatches", "n_actors"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"agent.{name} must be positive")
        for name in ("step_size", "clip", "value_coef", "entropy_coef"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"agent.{name} must be >= 0")
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError("agent.gamma and agent.lam must lie in [0, 1]")
        if self.n_minibatches > self.horizon * self.n_actors:
            raise ConfigurationError("More minibatches than samples per update")
        if not self.hidden or any(h <= 0 for h in self.hidden):
            raise ConfigurationError(
                f"agent.hidden must be positive sizes, got {self.hidden}"
            )

    def alpha(self, progress: float) -> float:
        if not self.anneal:
            return 1.0
        return max(0.0, 1.0 - progress)


@dataclass
class PpoLoss:
    total: float
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float
    policy_gradients: list[np.ndarray]
    value_gradients: list[np.ndarray]


def ppo_loss(
    policy_net: MlpNetwork,
    value_net: MlpNetwork,
    batch: Batch,
    clip: float,
    value_coef: float,
    entropy_coef: float,
) -> PpoLoss:
    """
    ``-mean(min(r A, clip(r) A)) + value_coef * mean((V - R)^2)
    - entropy_coef * mean(H)`` with its analytic gradients.

    The ratio ``r`` compares the current unshaped policy to the stored
    behaviour log-probability.
    """
    n = len(batch)
    logits, policy_cache = forward(policy_net, batch.observations)
    terms = PolicyTerms.evaluate(logits, batch.actions)
    values, value_cache = value_predictions(value_net, batch.observations)

    log_ratio = terms.taken_log_probs - batch.behavior_log_probs
    ratio = np.exp(log_ratio)
    advantages = batch.advantages
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantages
    in_range = np.abs(ratio - 1.0) <= clip
    surrogate = np.minimum(unclipped, clipped)

    policy_loss = -float(surrogate.mean())
    value_loss = float(((values - batch.returns) ** 2).mean())
    entropy = float(terms.entropy.mean())
    total = policy_loss + value_coef * value_loss - entropy_coef * entropy
    approx_kl = float(((ratio - 1.0) - log_ratio).mean())
    clip_fraction = float((~in_range).mean())
    check_finite_loss(
        "PPO",
        {"policy": policy_loss, "value": value_loss, "entropy": entropy},
    )

    # d(surrogate)/d(log pi(a)) is r A wherever the unclipped branch is active
    surrogate_slope = np.where((unclipped <= clipped) | in_range, unclipped, 0.0)
    logit_gradient = (
        -terms.taken_log_prob_gradient(surrogate_slope)
        - entropy_coef * terms.entropy_gradient()
    ) / n
    value_gradient = value_coef * 2.0 * (values - batch.returns) / n

    return PpoLoss(
        total=total,
        policy_loss=policy_loss,
        value_loss=value_loss,
        entropy=entropy,
        approx_kl=approx_kl,
        clip_fraction=clip_fraction,
        policy_gradients=backward(policy_net, policy_cache, logit_gradient),
        value_gradients=backward(value_net, value_cache, value_gradient[:, None]),
    )


def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    return (advantages - advantages.mean()) / max(
        float(advantages.std()), ADVANTAGE_STD_FLOOR
    )


def ppo_update(
    model: ActorCritic,
    rollout: Rollout,
    cfg: PpoConfig,
    progress: float,
    rng: np.random.Generator,
) -> tuple[ActorCritic, dict[str, float]]:
    """
    ``cfg.epochs`` passes over the rollout in ``cfg.n_minibatches`` shuffled
    minibatches, one Adam step per minibatch.

    Parameters
    ----------
    model : ActorCritic
        Networks and optimizer states before the update.
    rollout : Rollout
        Rollout with advantages and returns filled in.
    cfg : PpoConfig
        Hyperparameters.
    progress : float
        Fraction of the training steps already taken; sets the annealing factor.
    rng : np.random.Generator
        Shuffles the minibatches.

    Returns
    -------
    tuple[ActorCritic, dict[str, float]]
        Updated model and the loss statistics averaged over all minibatches.

    Raises
    ------
    NumericalError
        On a non-finite loss or gradient. ``model`` is left as it was.
    """
    alpha = cfg.alpha(progress)
    clip = cfg.clip * alpha
    step_size = cfg.step_size * alpha
    batch = rollout.to_batch()
    batch.advantages = normalize_advantages(batch.advantages)

    policy, value = model.policy, model.value
    policy_adam = replace(model.policy_adam, step_size=step_size)
    value_adam = replace(model.value_adam, step_size=step_size)
    history: list[PpoLoss] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(batch))
        for indices in np.array_split(order, cfg.n_minibatches):
            loss = ppo_loss(
                policy,
                value,
                batch.take(indices),
                clip,
                cfg.value_coef,
                cfg.entropy_coef,
            )
            policy, policy_adam = apply_adam(policy, loss.policy_gradients, policy_adam)
            value, value_adam = apply_adam(value, loss.value_gradients, value_adam)
            history.append(loss)

    stats = {
        name: float(np.mean([getattr(loss, name) for loss in history]))
        for name in STAT_NAMES
    }
    stats["alpha"] = alpha
    return ActorCritic(policy, value, policy_adam, value_adam), stats
