import re

import numpy as np

from src.perturb_explore.environments.cartpole import (
    SparseCartPole,
    SparseCartPoleConfig,
)
from src.perturb_explore.environments.chain import ChainMdp, ChainMdpConfig
from src.perturb_explore.environments.core import Environment, StepResult
from src.perturb_explore.environments.tabular import (
    BanditEnv,
    RandomMdp,
    TabularMdpEnv,
    random_mdp,
    value_iteration,
)
from src.perturb_explore.errors import ConfigurationError

__all__ = [
    "BanditEnv",
    "ChainMdp",
    "ChainMdpConfig",
    "Environment",
    "RandomMdp",
    "SparseCartPole",
    "SparseCartPoleConfig",
    "StepResult",
    "TabularMdpEnv",
    "discretize",
    "make_env",
    "random_mdp",
    "validate_env_id",
    "value_iteration",
]

_CHAIN = re.compile(r"^chain:(?P<length>\d+)$")
_RANDOM_MDP = re.compile(r"^random-mdp:(?P<s>\d+)x(?P<a>\d+):(?P<seed>\d+)$")
_BANDIT = re.compile(r"^bandit:(?P<arms>\d+)$")


def make_env(env_id: str) -> Environment:
    """
    Build an environment from its string id.

    Parameters
    ----------
    env_id : str
        One of ``sparse-cartpole``, ``chain:<L>``,
        ``random-mdp:<states>x<actions>:<seed>`` or ``bandit:<arms>``. The
        bandit pays 1 for arm 0 and 0 for every other arm.

    Returns
    -------
    Environment
    """
    if env_id == "sparse-cartpole":
        return SparseCartPole()
    if match := _CHAIN.match(env_id):
        return ChainMdp(ChainMdpConfig(length=int(match["length"])))
    if match := _RANDOM_MDP.match(env_id):
        mdp = random_mdp(int(match["s"]), int(match["a"]), seed=int(match["seed"]))
        return TabularMdpEnv(mdp)
    if match := _BANDIT.match(env_id):
        arms = int(match["arms"])
        return BanditEnv(tuple(1.0 if arm == 0 else 0.0 for arm in range(arms)))
    raise ConfigurationError(f"Unknown environment id {env_id!r}")


def validate_env_id(env_id: str) -> str:
    make_env(env_id)
    return env_id


def discretize(env: Environment, observation: np.ndarray) -> tuple[int, ...]:
    """State key for the count model: exact index for tabular environments,
    grid cell for continuous ones."""
    return env.discretize(observation)
