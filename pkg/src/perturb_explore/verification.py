"""
Built-in oracle suite: gradient checks, pseudo-count exactness, shaping
invariances, structured-factor ordering, sporadic-reward statistics and GAE
against direct summation.
"""

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from rich.console import Console

from src.perturb_explore.agents import A2cConfig, ActorCritic, Batch, PpoConfig, gae
from src.perturb_explore.agents.a2c import a2c_loss
from src.perturb_explore.agents.ppo import ppo_loss
from src.perturb_explore.exploration import (
    CountModel,
    NoveltyModels,
    RewardPerturbConfig,
    density_pair,
    perturb_rewards,
    pseudo_count,
    record_visit,
    shape_logits,
    state_action_input,
    structured_epsilons,
    train_autoencoder,
)
from src.perturb_explore.numerics import (
    finite_diff_check,
    forward,
    log_softmax,
    squared_error,
)

console = Console()

GRADIENT_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _toy_batch(
    policy_net, rng: np.random.Generator, n: int, observation_size: int
) -> Batch:
    """Samples whose log-ratios sit well inside or well outside a 0.2 clip range."""
    observations = rng.normal(size=(n, observation_size))
    n_actions = policy_net.output_size
    actions = rng.integers(n_actions, size=n)
    logits, _ = forward(policy_net, observations)
    current = log_softmax(logits)[np.arange(n), actions]
    offsets = np.where(
        np.arange(n) % 2 == 0,
        rng.uniform(-0.05, 0.05, size=n),
        rng.choice([-0.6, 0.6], size=n),
    )
    return Batch(
        observations=observations,
        actions=actions,
        behavior_log_probs=current + offsets,
        advantages=rng.normal(size=n),
        returns=rng.normal(size=n),
    )


def check_gradients(
    seed: int = 0,
    batch_size: int = 16,
    max_coordinates: int | None = 4000,
    tolerance: float = GRADIENT_TOLERANCE,
) -> CheckResult:
    """Analytic gradients of every training loss against central differences."""
    rng = np.random.default_rng(seed)
    observation_size, n_actions = 5, 3
    ppo_cfg, a2c_cfg = PpoConfig(), A2cConfig()
    reports = {}

    def policy_side(loss_fn, value_net):
        def loss(net, batch):
            result = loss_fn(net, value_net, batch)
            return result.total, result.policy_gradients

        return loss

    def value_side(loss_fn, policy_net):
        def loss(net, batch):
            result = loss_fn(policy_net, net, batch)
            return result.total, result.value_gradients

        return loss

    def ppo(policy, value, batch):
        return ppo_loss(
            policy, value, batch, 0.2, ppo_cfg.value_coef, ppo_cfg.entropy_coef
        )

    def a2c(policy, value, batch):
        return a2c_loss(policy, value, batch, a2c_cfg.value_coef, a2c_cfg.entropy_coef)

    architectures = (("ppo", ppo, ppo_cfg.hidden), ("a2c", a2c, a2c_cfg.hidden))
    for name, loss_fn, hidden in architectures:
        model = ActorCritic.create(observation_size, n_actions, hidden, rng, 1e-3)
        batch = _toy_batch(model.policy, rng, batch_size, observation_size)
        reports[f"{name} policy"] = finite_diff_check(
            model.policy,
            policy_side(loss_fn, model.value),
            batch,
            tolerance,
            max_coordinates=max_coordinates,
            rng=rng,
        )
        reports[f"{name} value"] = finite_diff_check(
            model.value,
            value_side(loss_fn, model.policy),
            batch,
            tolerance,
            max_coordinates=max_coordinates,
            rng=rng,
        )

    novelty = NoveltyModels.create(observation_size, n_actions, rng)
    sa = state_action_input(
        rng.normal(size=(batch_size, observation_size)),
        rng.integers(n_actions, size=batch_size),
        n_actions,
    )
    reports["autoencoder"] = finite_diff_check(
        novelty.autoencoder,
        lambda net, x: squared_error(net, x, x),
        sa,
        tolerance,
        max_coordinates=max_coordinates,
        rng=rng,
    )
    targets = rng.normal(size=(batch_size, observation_size))
    reports["forward model"] = finite_diff_check(
        novelty.forward_model,
        lambda net, x: squared_error(net, x, targets),
        sa,
        tolerance,
        max_coordinates=max_coordinates,
        rng=rng,
    )

    passed = all(r.passed for r in reports.values())
    detail = ", ".join(f"{k} {r.max_relative_error:.2e}" for k, r in reports.items())
    return CheckResult("gradients", passed, detail)


def check_pseudo_counts(
    seed: int = 0, n_sequences: int = 1000, n_states: int = 10, max_visits: int = 10_000
) -> CheckResult:
    """Pseudo-counts recovered from density pairs equal the visit counts."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    exact = True
    for _ in range(n_sequences):
        model = CountModel()
        length = int(rng.integers(1, max_visits + 1))
        weights = rng.dirichlet(np.ones(n_states))
        for key in rng.choice(n_states, size=length, p=weights):
            record_visit(model, int(key))
        for key in range(n_states):
            count = pseudo_count(*density_pair(model, key))
            exact &= count == model.counts.get(key, 0)
            worst = max(worst, abs(float(count) - model.counts.get(key, 0)))
    passed = exact and worst <= 1e-9
    return CheckResult(
        "pseudo-counts", passed, f"{n_sequences} sequences, max error {worst:.1e}"
    )


def check_shaping(seed: int = 0, n_pairs: int = 10_000) -> CheckResult:
    """Valid distributions, uniform-factor cancellation, ranking preservation."""
    rng = np.random.default_rng(seed)
    n_actions = rng.integers(2, 9, size=n_pairs)
    worst_sum, worst_uniform, rankings_kept = 0.0, 0.0, 0
    for k in n_actions:
        logits = rng.normal(scale=3.0, size=k)
        eps = rng.uniform(0.0, 1.0, size=k)
        shaped = shape_logits(logits, eps)
        zero = shape_logits(logits, np.zeros(k))
        uniform = shape_logits(logits, np.full(k, rng.uniform(0.0, 5.0)))
        worst_sum = max(worst_sum, abs(shaped.sum() - 1.0), abs(zero.sum() - 1.0))
        worst_uniform = max(worst_uniform, float(np.abs(uniform - zero).max()))
        rankings_kept += np.array_equal(
            np.argsort(logits, kind="stable"), np.argsort(zero, kind="stable")
        )
    passed = worst_sum <= 1e-9 and worst_uniform <= 1e-12 and rankings_kept == n_pairs
    return CheckResult(
        "shaping invariances",
        passed,
        f"sum error {worst_sum:.1e}, uniform-factor deviation {worst_uniform:.1e}, "
        f"rankings kept {rankings_kept}/{n_pairs}",
    )


def check_structured_epsilons(
    seed: int = 0,
    repetitions: int = 100,
    updates: int = 1000,
    observation_size: int = 4,
    n_actions: int = 3,
) -> CheckResult:
    """After training on one pair, that action gets the smallest factor."""
    ss = np.random.SeedSequence(seed)
    minimal = 0
    worst_sum = 0.0
    for child in ss.spawn(repetitions):
        rng = np.random.default_rng(child)
        novelty = NoveltyModels.create(observation_size, n_actions, rng)
        s = rng.normal(size=observation_size)
        for _ in range(updates):
            train_autoencoder(novelty, s, 0)
        eps = structured_epsilons(novelty, s, n_actions)
        worst_sum = max(worst_sum, abs(eps.sum() - 1.0))
        minimal += bool(np.all(eps[0] < eps[1:]))
    passed = worst_sum <= 1e-9 and minimal >= int(np.ceil(0.95 * repetitions))
    return CheckResult(
        "structured factors",
        passed,
        f"trained action minimal in {minimal}/{repetitions}, sum error {worst_sum:.1e}",
    )


def check_sporadic_rewards(seed: int = 0, n_draws: int = 1_000_000) -> CheckResult:
    """Bonus frequency and mean match the configured probability and range."""
    rng = np.random.default_rng(seed)
    zeros = np.zeros(n_draws)
    bonus = perturb_rewards(zeros, RewardPerturbConfig(0.5, 1.0, 0.1), rng)
    frequency = float((bonus > 0).mean())
    mean = float(bonus.mean())
    silent_beta = perturb_rewards(zeros, RewardPerturbConfig(0.5, 0.0, 0.1), rng)
    silent_p = perturb_rewards(zeros, RewardPerturbConfig(0.0, 1.0, 0.1), rng)
    passed = (
        abs(frequency - 0.5) <= 0.005
        and abs(mean - 0.025) <= 0.001
        and not silent_beta.any()
        and not silent_p.any()
    )
    return CheckResult(
        "sporadic rewards", passed, f"frequency {frequency:.4f}, mean bonus {mean:.5f}"
    )


def gae_by_summation(
    rewards: np.ndarray,
    values: np.ndarray,
    next_values: np.ndarray,
    terminated: np.ndarray,
    truncated: np.ndarray,
    gamma: float,
    lam: float,
) -> np.ndarray:
    """``sum_k (gamma lam)^k delta_{t+k}`` up to the end of the episode, one actor."""
    deltas = rewards + gamma * next_values * (1.0 - terminated) - values
    ends = np.logical_or(terminated, truncated)
    advantages = np.zeros_like(rewards)
    for t in range(len(rewards)):
        total = 0.0
        for k in range(len(rewards) - t):
            total += (gamma * lam) ** k * deltas[t + k]
            if ends[t + k]:
                break
        advantages[t] = total
    return advantages


def check_gae(
    seed: int = 0, n_rollouts: int = 1000, gamma: float = 0.99, lam: float = 0.95
) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_rollouts):
        horizon = int(rng.integers(1, 33))
        rewards, values, next_values = rng.normal(size=(3, horizon))
        terminated = rng.random(horizon) < 0.1
        truncated = ~terminated & (rng.random(horizon) < 0.05)
        recursive, _ = gae(
            rewards[:, None],
            values[:, None],
            next_values[:, None],
            terminated[:, None],
            truncated[:, None],
            gamma,
            lam,
        )
        direct = gae_by_summation(
            rewards, values, next_values, terminated, truncated, gamma, lam
        )
        worst = max(worst, float(np.abs(recursive[:, 0] - direct).max()))
    return CheckResult("gae", worst <= 1e-10, f"max deviation {worst:.1e}")


CHECKS: dict[str, Callable[[], CheckResult]] = {
    "gradients": check_gradients,
    "pseudo-counts": check_pseudo_counts,
    "shaping": check_shaping,
    "structured": check_structured_epsilons,
    "sporadic-rewards": check_sporadic_rewards,
    "gae": check_gae,
}


def verify(names: list[str] | None = None) -> list[CheckResult]:
    """Run the named checks (all by default) and log each outcome."""
    results = []
    for name in names or list(CHECKS):
        start = time.perf_counter()
        result = CHECKS[name]()
        result.seconds = time.perf_counter() - start
        status = "[green]PASS" if result.passed else "[red]FAIL"
        console.log(
            f"{status}[/] {result.name} ({result.seconds:.1f}s): {result.detail}"
        )
        results.append(result)
    return results
