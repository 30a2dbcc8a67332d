import math
from dataclasses import dataclass

import numpy as np

from src.perturb_explore.constants import DeskScale
from src.perturb_explore.environments.core import (
    StepResult,
    bin_observation,
    check_action,
)
from src.perturb_explore.errors import ConfigurationError, UsageError

# push-left, no-op, push-right
FORCE_DIRECTIONS = (-1.0, 0.0, 1.0)


@dataclass
class SparseCartPoleConfig:
    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    force_magnitude: float = 10.0
    timestep: float = 0.02
    x_limit: float = 2.4
    success_threshold: float = 0.8
    max_steps: int = 500
    start_angle_noise: float = 0.05

    def __post_init__(self):
        physical = {
            "gravity": self.gravity,
            "cart_mass": self.cart_mass,
            "pole_mass": self.pole_mass,
            "pole_half_length": self.pole_half_length,
            "force_magnitude": self.force_magnitude,
            "timestep": self.timestep,
            "x_limit": self.x_limit,
        }
        for name, value in physical.items():
            if value <= 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")
        if not -1.0 < self.success_threshold < 1.0:
            raise ConfigurationError(
                f"success_threshold must lie in (-1, 1), got {self.success_threshold}"
            )
        if self.max_steps <= 0:
            raise ConfigurationError(
                f"max_steps must be positive, got {self.max_steps}"
            )


class SparseCartPole:
    """
    Cart-pole swing-up with a sparse reward.

    The pole starts hanging down (angle pi, zero is upright) and the agent earns
    1 on every step where ``cos(theta) >= success_threshold`` with the cart
    inside the track. Leaving the track terminates the episode.

    Observations are ``[x, x_dot, cos(theta), sin(theta), theta_dot]``. The
    count-model grid spans ``[-x_limit, x_limit]``, ``[-5, 5]``, ``[-1, 1]``,
    ``[-1, 1]`` and ``[-10, 10]`` respectively.
    """

    n_actions = 3
    observation_size = 5

    def __init__(
        self,
        config: SparseCartPoleConfig | None = None,
        bins: int = DeskScale.DISCRETIZATION_BINS,
    ):
        self.config = config if config is not None else SparseCartPoleConfig()
        self.bins = bins
        self.low = np.array([-self.config.x_limit, -5.0, -1.0, -1.0, -10.0])
        self.high = np.array([self.config.x_limit, 5.0, 1.0, 1.0, 10.0])
        self.state = np.zeros(4)
        self.steps = 0
        self._finished = True

    def _observation(self) -> np.ndarray:
        x, x_dot, theta, theta_dot = self.state
        return np.array([x, x_dot, math.cos(theta), math.sin(theta), theta_dot])

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        noise = self.config.start_angle_noise
        theta = math.pi + rng.uniform(-noise, noise)
        self.state = np.array([0.0, 0.0, theta, 0.0])
        self.steps = 0
        self._finished = False
        return self._observation()

    def step(self, action: int) -> StepResult:
        action = check_action(action, self.n_actions)
        if self._finished:
            raise UsageError("Episode is over; call reset before stepping again")
        cfg = self.config
        x, x_dot, theta, theta_dot = self.state

        force = cfg.force_magnitude * FORCE_DIRECTIONS[action]
        total_mass = cfg.cart_mass + cfg.pole_mass
        pole_mass_length = cfg.pole_mass * cfg.pole_half_length
        cos_t, sin_t = math.cos(theta), math.sin(theta)

        temp = (force + pole_mass_length * theta_dot**2 * sin_t) / total_mass
        theta_acc = (cfg.gravity * sin_t - cos_t * temp) / (
            cfg.pole_half_length
            * (4.0 / 3.0 - cfg.pole_mass * cos_t**2 / total_mass)
        )
        x_acc = temp - pole_mass_length * theta_acc * cos_t / total_mass

        # semi-implicit Euler
        x_dot = x_dot + cfg.timestep * x_acc
        x = x + cfg.timestep * x_dot
        theta_dot = theta_dot + cfg.timestep * theta_acc
        theta = theta + cfg.timestep * theta_dot
        self.state = np.array([x, x_dot, theta, theta_dot])
        self.steps += 1

        inside = abs(x) <= cfg.x_limit
        reward = 1.0 if (math.cos(theta) >= cfg.success_threshold and inside) else 0.0
        terminated = not inside
        truncated = (not terminated) and self.steps >= cfg.max_steps
        self._finished = terminated or truncated
        return StepResult(self._observation(), reward, terminated, truncated)

    def discretize(self, observation: np.ndarray) -> tuple[int, ...]:
        return bin_observation(observation, self.low, self.high, self.bins)
