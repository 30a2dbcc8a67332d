from dataclasses import fields
from typing import Any

import numpy as np

from src.perturb_explore.agents.a2c import A2cConfig, a2c_loss, a2c_update
from src.perturb_explore.agents.actor_critic import ActorCritic, Batch, act
from src.perturb_explore.agents.ppo import PpoConfig, ppo_loss, ppo_update
from src.perturb_explore.agents.rollout import (
    ActorPool,
    EpisodeRecord,
    Rollout,
    collect_rollout,
    gae,
    gae_advantages,
    nstep_returns,
)
from src.perturb_explore.errors import ConfigurationError

__all__ = [
    "A2cConfig",
    "ActorCritic",
    "ActorPool",
    "AgentConfig",
    "Batch",
    "EpisodeRecord",
    "PpoConfig",
    "Rollout",
    "a2c_loss",
    "a2c_update",
    "act",
    "agent_id",
    "collect_rollout",
    "compute_targets",
    "gae",
    "gae_advantages",
    "make_agent_config",
    "nstep_returns",
    "ppo_loss",
    "ppo_update",
    "update",
]

AgentConfig = PpoConfig | A2cConfig
AGENT_CONFIGS: dict[str, type] = {"ppo": PpoConfig, "a2c": A2cConfig}


def make_agent_config(agent_id: str, values: dict[str, Any]) -> AgentConfig:
    """Agent configuration for ``ppo`` or ``a2c``; unknown keys are rejected."""
    if agent_id not in AGENT_CONFIGS:
        raise ConfigurationError(
            f"agent.id must be one of {sorted(AGENT_CONFIGS)}, got {agent_id!r}"
        )
    config_class = AGENT_CONFIGS[agent_id]
    known = {f.name for f in fields(config_class)}
    unknown = set(values) - known
    if unknown:
        raise ConfigurationError(
            f"Unknown agent keys for {agent_id}: "
            f"{sorted(f'agent.{k}' for k in unknown)}"
        )
    try:
        return config_class(**values)
    except TypeError as e:
        raise ConfigurationError(f"Invalid agent configuration: {e}")


def agent_id(cfg: AgentConfig) -> str:
    return "ppo" if isinstance(cfg, PpoConfig) else "a2c"


def compute_targets(rollout: Rollout, cfg: AgentConfig) -> Rollout:
    if isinstance(cfg, PpoConfig):
        return gae_advantages(rollout, cfg.gamma, cfg.lam)
    return nstep_returns(rollout, cfg.gamma)


def update(
    model: ActorCritic,
    rollout: Rollout,
    cfg: AgentConfig,
    progress: float,
    rng: np.random.Generator,
) -> tuple[ActorCritic, dict[str, float]]:
    if isinstance(cfg, PpoConfig):
        return ppo_update(model, rollout, cfg, progress, rng)
    return a2c_update(model, rollout, cfg, progress, rng)
