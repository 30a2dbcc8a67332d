from dataclasses import dataclass
from typing import Protocol

import numpy as np

from src.perturb_explore.errors import UsageError


@dataclass(frozen=True)
class StepResult:
    """Outcome of one environment step. ``reward_ext`` is extrinsic only."""

    observation: np.ndarray
    reward_ext: float
    terminated: bool
    truncated: bool

    @property
    def done(self) -> bool:
        return self.terminated or self.truncated


class Environment(Protocol):
    n_actions: int
    observation_size: int

    def reset(self, seed: int) -> np.ndarray: ...

    def step(self, action: int) -> StepResult: ...

    def discretize(self, observation: np.ndarray) -> tuple[int, ...]: ...


def bin_observation(
    observation: np.ndarray, low: np.ndarray, high: np.ndarray, bins: int
) -> tuple[int, ...]:
    """
    Map every coordinate onto a uniform grid of ``bins`` cells over
    ``[low, high]``. Values outside the range land in the edge cells.
    """
    obs = np.asarray(observation, dtype=np.float64)
    scaled = (obs - low) / (high - low) * bins
    cells = np.clip(np.floor(scaled), 0, bins - 1).astype(np.int64)
    return tuple(int(c) for c in cells)


def one_hot(index: int, size: int) -> np.ndarray:
    v = np.zeros(size)
    v[index] = 1.0
    return v


def check_action(action: int, n_actions: int) -> int:
    if isinstance(action, (bool, np.bool_)) or not isinstance(
        action, (int, np.integer)
    ):
        raise UsageError(f"Action must be an integer index, got {action!r}")
    if not 0 <= int(action) < n_actions:
        raise UsageError(f"Action {action} outside [0, {n_actions})")
    return int(action)
