from dataclasses import dataclass

import numpy as np

from src.perturb_explore.environments.core import StepResult, check_action, one_hot
from src.perturb_explore.errors import ConfigurationError, UsageError

LEFT, RIGHT = 0, 1


@dataclass
class ChainMdpConfig:
    length: int = 40
    left_reward: float = 0.001
    goal_reward: float = 1.0
    start_state: int = 1

    def __post_init__(self):
        if self.length < 3:
            raise ConfigurationError(f"Chain length must be >= 3, got {self.length}")
        if not 0 < self.start_state < self.length - 1:
            raise ConfigurationError(
                f"start_state must be an interior state, got {self.start_state}"
            )

    @property
    def max_steps(self) -> int:
        return 2 * self.length


class ChainMdp:
    """
    A line of states with a small reward at the left end and the goal at the
    right end. Reaching the goal ends the episode; otherwise the episode is cut
    after ``2 * length`` steps. Observations are one-hot state vectors.
    """

    n_actions = 2

    def __init__(self, config: ChainMdpConfig | None = None):
        self.config = config if config is not None else ChainMdpConfig()
        self.observation_size = self.config.length
        self.position = self.config.start_state
        self.steps = 0
        self._finished = True

    def reset(self, seed: int) -> np.ndarray:
        # The chain is deterministic; the seed is accepted for interface parity.
        self.position = self.config.start_state
        self.steps = 0
        self._finished = False
        return one_hot(self.position, self.config.length)

    def step(self, action: int) -> StepResult:
        action = check_action(action, self.n_actions)
        if self._finished:
            raise UsageError("Episode is over; call reset before stepping again")
        cfg = self.config
        if action == LEFT:
            self.position = max(0, self.position - 1)
        else:
            self.position = min(cfg.length - 1, self.position + 1)
        self.steps += 1

        reward = 0.0
        if self.position == 0:
            reward = cfg.left_reward
        elif self.position == cfg.length - 1:
            reward = cfg.goal_reward
        terminated = self.position == cfg.length - 1
        truncated = (not terminated) and self.steps >= cfg.max_steps
        self._finished = terminated or truncated
        return StepResult(
            one_hot(self.position, cfg.length), reward, terminated, truncated
        )

    def discretize(self, observation: np.ndarray) -> tuple[int, ...]:
        return (int(np.argmax(observation)),)
