import itertools
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import polars as pl

from src.perturb_explore.environments.core import StepResult, check_action, one_hot
from src.perturb_explore.errors import ConfigurationError, UsageError


@dataclass
class RandomMdp:
    """
    Finite MDP. ``transitions[s, a, s']`` is the probability of moving from
    ``s`` to ``s'`` under ``a``; ``rewards[s, a]`` is the expected reward.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        if self.transitions.ndim != 3 or (
            self.transitions.shape[0] != self.transitions.shape[2]
        ):
            raise ConfigurationError(
                f"transitions must have shape (S, A, S), got {self.transitions.shape}"
            )
        if self.rewards.shape != self.transitions.shape[:2]:
            raise ConfigurationError(
                f"rewards must have shape {self.transitions.shape[:2]}, "
                f"got {self.rewards.shape}"
            )
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError(f"gamma must lie in [0, 1), got {self.gamma}")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    def check_stochastic(self, tolerance: float = 1e-12) -> None:
        row_sums = self.transitions.sum(axis=2)
        if np.any(self.transitions < 0) or np.any(np.abs(row_sums - 1.0) > tolerance):
            raise ConfigurationError(
                "Every transition row must be a probability distribution; "
                f"row sums range over [{row_sums.min()}, {row_sums.max()}]"
            )


def random_mdp(
    n_states: int, n_actions: int, seed: int, gamma: float = 0.9
) -> RandomMdp:
    """Dirichlet(1) transition rows and uniform [0, 1) rewards."""
    if n_states <= 0 or n_actions <= 0:
        raise ConfigurationError("n_states and n_actions must be positive")
    rng = np.random.default_rng(seed)
    transitions = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    transitions /= transitions.sum(axis=2, keepdims=True)
    rewards = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return RandomMdp(transitions=transitions, rewards=rewards, gamma=gamma)


@dataclass
class ValueIterationResult:
    values: np.ndarray
    policy: np.ndarray
    residual: float
    iterations: int


def action_values(mdp: RandomMdp, values: np.ndarray) -> np.ndarray:
    return mdp.rewards + mdp.gamma * mdp.transitions @ values


def value_iteration(
    mdp: RandomMdp, tolerance: float = 1e-10, max_iterations: int = 1_000_000
) -> ValueIterationResult:
    """
    Optimal state values and the greedy policy of ``mdp``.

    Parameters
    ----------
    mdp : RandomMdp
        Must have row-stochastic transitions and ``gamma < 1``.
    tolerance : float
        Iteration stops once the sup-norm change of the values is at most this;
        the returned values then have a Bellman residual of at most
        ``gamma * tolerance``.
    max_iterations : int
        Safety cap on the number of sweeps.

    Returns
    -------
    ValueIterationResult
        Values, greedy policy (ties to the lowest action index), final residual.
    """
    mdp.check_stochastic()
    values = np.zeros(mdp.n_states)
    residual = np.inf
    iterations = 0
    while residual > tolerance and iterations < max_iterations:
        new_values = action_values(mdp, values).max(axis=1)
        residual = float(np.max(np.abs(new_values - values)))
        values = new_values
        iterations += 1
    # np.argmax returns the first maximum, which is the lowest action index
    policy = np.argmax(action_values(mdp, values), axis=1)
    return ValueIterationResult(values, policy, residual, iterations)


def evaluate_policy(mdp: RandomMdp, policy: np.ndarray) -> np.ndarray:
    """Exact values of a deterministic policy from the linear Bellman system."""
    states = np.arange(mdp.n_states)
    p_pi = mdp.transitions[states, policy]
    r_pi = mdp.rewards[states, policy]
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, r_pi)


def best_policy_by_enumeration(mdp: RandomMdp) -> tuple[np.ndarray, np.ndarray]:
    """
    Brute-force optimum over every deterministic policy. Only sensible for a
    handful of states.
    """
    # The optimal policy dominates every state, so it also maximizes the sum.
    best = max(
        itertools.product(range(mdp.n_actions), repeat=mdp.n_states),
        key=lambda choice: evaluate_policy(mdp, np.array(choice)).sum(),
    )
    policy = np.array(best)
    return evaluate_policy(mdp, policy), policy


class TabularMdpEnv:
    """
    Samples a `RandomMdp`. Episodes start in a uniformly random state and are
    cut after ``max_steps`` steps (default ``round(4 / (1 - gamma))``).
    Observations are one-hot state vectors.
    """

    def __init__(self, mdp: RandomMdp, max_steps: int | None = None):
        mdp.check_stochastic()
        self.mdp = mdp
        self.n_actions = mdp.n_actions
        self.observation_size = mdp.n_states
        self.max_steps = (
            max_steps if max_steps is not None else max(1, round(4 / (1 - mdp.gamma)))
        )
        self._cumulative = np.cumsum(mdp.transitions, axis=2)
        self._rng = np.random.default_rng(0)
        self.state = 0
        self.steps = 0
        self._finished = True

    def reset(self, seed: int) -> np.ndarray:
        self._rng = np.random.default_rng(seed)
        self.state = int(self._rng.integers(self.mdp.n_states))
        self.steps = 0
        self._finished = False
        return one_hot(self.state, self.mdp.n_states)

    def step(self, action: int) -> StepResult:
        action = check_action(action, self.n_actions)
        if self._finished:
            raise UsageError("Episode is over; call reset before stepping again")
        reward = float(self.mdp.rewards[self.state, action])
        u = self._rng.random()
        next_state = int(
            np.searchsorted(self._cumulative[self.state, action], u, side="right")
        )
        self.state = min(next_state, self.mdp.n_states - 1)
        self.steps += 1
        truncated = self.steps >= self.max_steps
        self._finished = truncated
        observation = one_hot(self.state, self.mdp.n_states)
        return StepResult(observation, reward, False, truncated)

    def discretize(self, observation: np.ndarray) -> tuple[int, ...]:
        return (int(np.argmax(observation)),)


class BanditEnv:
    """Single-state bandit; every pull ends the episode."""

    observation_size = 1

    def __init__(self, rewards: tuple[float, ...] = (1.0, 0.0)):
        if len(rewards) < 2:
            raise ConfigurationError("A bandit needs at least two arms")
        self.rewards = tuple(float(r) for r in rewards)
        self.n_actions = len(self.rewards)
        self._finished = True

    def reset(self, seed: int) -> np.ndarray:
        self._finished = False
        return np.ones(1)

    def step(self, action: int) -> StepResult:
        action = check_action(action, self.n_actions)
        if self._finished:
            raise UsageError("Episode is over; call reset before stepping again")
        self._finished = True
        return StepResult(np.ones(1), self.rewards[action], True, False)

    def discretize(self, observation: np.ndarray) -> tuple[int, ...]:
        return (0,)


_HEADER = re.compile(
    r"#\s*n_states=(?P<s>\d+)\s+n_actions=(?P<a>\d+)\s+gamma=(?P<g>[0-9.eE+-]+)"
)


def write_mdp_table(mdp: RandomMdp, path: Path) -> None:
    """
    Write ``mdp`` as text: a ``# n_states=.. n_actions=.. gamma=..`` header
    line, then CSV columns ``state,action,next_state,probability,reward``.
    """
    s, a, s_next = np.meshgrid(
        np.arange(mdp.n_states),
        np.arange(mdp.n_actions),
        np.arange(mdp.n_states),
        indexing="ij",
    )
    table = pl.DataFrame(
        {
            "state": s.reshape(-1),
            "action": a.reshape(-1),
            "next_state": s_next.reshape(-1),
            "probability": mdp.transitions.reshape(-1),
            "reward": np.repeat(mdp.rewards.reshape(-1), mdp.n_states),
        }
    )
    with Path(path).open("w") as f:
        f.write(
            f"# n_states={mdp.n_states} n_actions={mdp.n_actions} gamma={mdp.gamma!r}\n"
        )
        table.write_csv(f)


def read_mdp_table(path: Path) -> RandomMdp:
    with Path(path).open() as f:
        header = f.readline()
    match = _HEADER.match(header)
    if match is None:
        raise ConfigurationError(f"{path} has no MDP header line")
    n_states, n_actions = int(match["s"]), int(match["a"])
    table = pl.read_csv(path, comment_prefix="#").sort(
        ["state", "action", "next_state"]
    )
    if table.height != n_states * n_actions * n_states:
        raise ConfigurationError(
            f"{path} holds {table.height} rows, "
            f"expected {n_states * n_actions * n_states}"
        )
    transitions = table["probability"].to_numpy().reshape(n_states, n_actions, n_states)
    rewards = (
        table.filter(pl.col("next_state") == 0)["reward"]
        .to_numpy()
        .reshape(n_states, n_actions)
    )
    return RandomMdp(transitions=transitions, rewards=rewards, gamma=float(match["g"]))
