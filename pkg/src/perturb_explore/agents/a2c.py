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


@dataclass
class A2cConfig:
    """Synchronous advantage actor-critic on ``horizon``-step bootstrapped returns."""

    horizon: int = 8
    step_size: float = 7e-4
    gamma: float = 0.99
    n_actors: int = 4
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    anneal: bool = False
    hidden: tuple[int, ...] = field(default_factory=lambda: (128, 128))
    activation: Activation = "tanh"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        for name in ("horizon", "n_actors"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"agent.{name} must be positive")
        for name in ("step_size", "value_coef", "entropy_coef"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"agent.{name} must be >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError("agent.gamma must lie in [0, 1]")
        if not self.hidden or any(h <= 0 for h in self.hidden):
            raise ConfigurationError(
                f"agent.hidden must be positive sizes, got {self.hidden}"
            )

    def alpha(self, progress: float) -> float:
        if not self.anneal:
            return 1.0
        return max(0.0, 1.0 - progress)


@dataclass
class A2cLoss:
    total: float
    policy_loss: float
    value_loss: float
    entropy: float
    policy_gradients: list[np.ndarray]
    value_gradients: list[np.ndarray]


def a2c_loss(
    policy_net: MlpNetwork,
    value_net: MlpNetwork,
    batch: Batch,
    value_coef: float,
    entropy_coef: float,
) -> A2cLoss:
    """
    ``-mean(log pi(a|s) A) + value_coef * mean((R - V)^2)
    - entropy_coef * mean(H)``; ``A`` is taken as a constant.
    """
    n = len(batch)
    logits, policy_cache = forward(policy_net, batch.observations)
    terms = PolicyTerms.evaluate(logits, batch.actions)
    values, value_cache = value_predictions(value_net, batch.observations)

    policy_loss = -float((terms.taken_log_probs * batch.advantages).mean())
    value_loss = float(((batch.returns - values) ** 2).mean())
    entropy = float(terms.entropy.mean())
    total = policy_loss + value_coef * value_loss - entropy_coef * entropy
    check_finite_loss(
        "A2C",
        {"policy": policy_loss, "value": value_loss, "entropy": entropy},
    )

    logit_gradient = (
        -terms.taken_log_prob_gradient(batch.advantages)
        - entropy_coef * terms.entropy_gradient()
    ) / n
    value_gradient = value_coef * 2.0 * (values - batch.returns) / n
    return A2cLoss(
        total=total,
        policy_loss=policy_loss,
        value_loss=value_loss,
        entropy=entropy,
        policy_gradients=backward(policy_net, policy_cache, logit_gradient),
        value_gradients=backward(value_net, value_cache, value_gradient[:, None]),
    )


def a2c_update(
    model: ActorCritic,
    rollout: Rollout,
    cfg: A2cConfig,
    progress: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[ActorCritic, dict[str, float]]:
    """One Adam step on the whole rollout. ``rng`` is accepted and unused."""
    alpha = cfg.alpha(progress)
    loss = a2c_loss(
        model.policy, model.value, rollout.to_batch(), cfg.value_coef, cfg.entropy_coef
    )
    policy_adam = replace(model.policy_adam, step_size=cfg.step_size * alpha)
    value_adam = replace(model.value_adam, step_size=cfg.step_size * alpha)
    policy, policy_adam = apply_adam(model.policy, loss.policy_gradients, policy_adam)
    value, value_adam = apply_adam(model.value, loss.value_gradients, value_adam)
    stats = {
        "total": loss.total,
        "policy_loss": loss.policy_loss,
        "value_loss": loss.value_loss,
        "entropy": loss.entropy,
        "alpha": alpha,
    }
    return ActorCritic(policy, value, policy_adam, value_adam), stats
