from dataclasses import asdict, dataclass

import numpy as np

from src.perturb_explore.agents.actor_critic import ActorCritic, Batch, act
from src.perturb_explore.environments import StepResult, make_env
from src.perturb_explore.exploration import (
    ExplorationState,
    ExploreKind,
    perturb_parameters,
    perturb_reward,
    prediction_bonus,
    train_autoencoder,
    visit_bonus,
)
from src.perturb_explore.numerics import forward


@dataclass
class EpisodeRecord:
    seed: int
    episode: int
    global_step: int
    return_ext: float
    return_learner: float
    length: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Rollout:
    """
    ``horizon`` steps of ``n_actors`` actors. Every per-step array has shape
    ``(horizon, n_actors)`` (``observations`` and ``epsilons`` carry one more
    trailing axis). ``next_values`` holds the value of the true successor of
    each step, before any reset, so a time-limit cut-off still bootstraps.
    """

    observations: np.ndarray
    actions: np.ndarray
    behavior_log_probs: np.ndarray
    epsilons: np.ndarray
    shaped: np.ndarray
    rewards_ext: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    next_values: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @classmethod
    def empty(
        cls, horizon: int, n_actors: int, observation_size: int, n_actions: int
    ) -> "Rollout":
        shape = (horizon, n_actors)
        return cls(
            observations=np.zeros((*shape, observation_size)),
            actions=np.zeros(shape, dtype=np.int64),
            behavior_log_probs=np.zeros(shape),
            epsilons=np.zeros((*shape, n_actions)),
            shaped=np.zeros(shape, dtype=bool),
            rewards_ext=np.zeros(shape),
            rewards=np.zeros(shape),
            values=np.zeros(shape),
            next_values=np.zeros(shape),
            terminated=np.zeros(shape, dtype=bool),
            truncated=np.zeros(shape, dtype=bool),
        )

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def to_batch(self) -> Batch:
        if self.advantages is None or self.returns is None:
            raise ValueError("Compute advantages before flattening the rollout")
        n = self.actions.size
        return Batch(
            observations=self.observations.reshape(n, -1),
            actions=self.actions.reshape(n),
            behavior_log_probs=self.behavior_log_probs.reshape(n),
            advantages=self.advantages.reshape(n),
            returns=self.returns.reshape(n),
        )


def gae(
    rewards: np.ndarray,
    values: np.ndarray,
    next_values: np.ndarray,
    terminated: np.ndarray,
    truncated: np.ndarray,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Generalized advantage estimates and return targets over the leading (time)
    axis.

    ``delta_t = r_t + gamma * V(s_{t+1}) * (1 - terminated_t) - V(s_t)`` and
    ``A_t = delta_t + gamma * lam * A_{t+1}``, where the recursion restarts at
    every episode boundary and past the last step.

    Returns
    -------
    tuple[np.ndarray, np.ndarray]
        Advantages and ``advantages + values``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    not_terminal = 1.0 - np.asarray(terminated, dtype=np.float64)
    continues = 1.0 - np.logical_or(terminated, truncated).astype(np.float64)
    deltas = rewards + gamma * next_values * not_terminal - values
    advantages = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0])
    for t in reversed(range(len(rewards))):
        running = deltas[t] + gamma * lam * continues[t] * running
        advantages[t] = running
    return advantages, advantages + values


def gae_advantages(rollout: Rollout, gamma: float, lam: float) -> Rollout:
    rollout.advantages, rollout.returns = gae(
        rollout.rewards,
        rollout.values,
        rollout.next_values,
        rollout.terminated,
        rollout.truncated,
        gamma,
        lam,
    )
    return rollout


def nstep_returns(rollout: Rollout, gamma: float) -> Rollout:
    """Bootstrapped n-step returns up to the horizon; GAE with ``lam = 1``."""
    return gae_advantages(rollout, gamma, 1.0)


class ActorPool:
    """
    ``n_actors`` copies of one environment stepped in a fixed actor order, with
    per-actor generators for the reset seeds and per-actor episode totals.
    """

    def __init__(
        self, env_id: str, n_actors: int, seed: int, seed_sequences: list
    ):
        if len(seed_sequences) != n_actors:
            raise ValueError("Need one seed sequence per actor")
        self.seed = seed
        self.envs = [make_env(env_id) for _ in range(n_actors)]
        self._rngs = [np.random.default_rng(ss) for ss in seed_sequences]
        self.observations = np.stack(
            [env.reset(self._reset_seed(i)) for i, env in enumerate(self.envs)]
        ).astype(np.float64)
        self.returns_ext = np.zeros(n_actors)
        self.returns_learner = np.zeros(n_actors)
        self.lengths = np.zeros(n_actors, dtype=np.int64)
        self.global_step = 0
        self.episodes_finished = 0

    @property
    def n_actors(self) -> int:
        return len(self.envs)

    @property
    def n_actions(self) -> int:
        return self.envs[0].n_actions

    @property
    def observation_size(self) -> int:
        return self.envs[0].observation_size

    def _reset_seed(self, actor: int) -> int:
        return int(self._rngs[actor].integers(2**63 - 1))

    def step(self, actions: np.ndarray) -> list[StepResult]:
        return [env.step(int(a)) for env, a in zip(self.envs, actions)]

    def finish_step(
        self, results: list[StepResult], learner_rewards: np.ndarray
    ) -> list[EpisodeRecord]:
        """Book the step, close finished episodes and reset their environments."""
        records = []
        for i, result in enumerate(results):
            self.global_step += 1
            self.returns_ext[i] += result.reward_ext
            self.returns_learner[i] += learner_rewards[i]
            self.lengths[i] += 1
            if result.done:
                records.append(
                    EpisodeRecord(
                        seed=self.seed,
                        episode=self.episodes_finished,
                        global_step=self.global_step,
                        return_ext=float(self.returns_ext[i]),
                        return_learner=float(self.returns_learner[i]),
                        length=int(self.lengths[i]),
                    )
                )
                self.episodes_finished += 1
                self.returns_ext[i] = 0.0
                self.returns_learner[i] = 0.0
                self.lengths[i] = 0
                self.observations[i] = self.envs[i].reset(self._reset_seed(i))
            else:
                self.observations[i] = result.observation
        return records


def learner_rewards(
    exploration: ExplorationState,
    pool: ActorPool,
    observations: np.ndarray,
    actions: np.ndarray,
    next_observations: np.ndarray,
    rewards_ext: np.ndarray,
    progress: float,
) -> np.ndarray:
    """
    Rewards the learner trains on: extrinsic plus whatever the reward-side
    mechanism adds. Visits and transitions are applied in actor order.
    """
    cfg = exploration.config
    reward_cfg = cfg.reward_config()
    if cfg.kind == ExploreKind.SPORADIC_REWARDS:
        return np.array(
            [
                perturb_reward(r, reward_cfg, exploration.rng, progress)
                for r in rewards_ext
            ]
        )
    if cfg.kind == ExploreKind.COUNT_BONUS:
        bonuses = [
            visit_bonus(
                exploration.count_model,
                pool.envs[i].discretize(s_next),
                cfg.density_denominator,
            )
            for i, s_next in enumerate(next_observations)
        ]
    elif cfg.kind == ExploreKind.PREDICTION_BONUS:
        bonuses = []
        for s, a, s_next in zip(observations, actions, next_observations):
            exploration.novelty.advance()
            bonuses.append(prediction_bonus(exploration.novelty, s, int(a), s_next))
    else:
        return np.array(rewards_ext, dtype=np.float64)
    return rewards_ext + reward_cfg.beta_at(progress) * np.array(bonuses)


def collect_rollout(
    pool: ActorPool,
    model: ActorCritic,
    exploration: ExplorationState,
    horizon: int,
    rng: np.random.Generator,
    total_steps: int,
) -> tuple[Rollout, list[EpisodeRecord]]:
    """
    Step every actor ``horizon`` times with the current networks.

    Parameters
    ----------
    pool : ActorPool
        Environments and their running episode totals.
    model : ActorCritic
        Acting networks; parameter noise, when selected, is applied to a copy
        of the policy drawn once per rollout.
    exploration : ExplorationState
        Selected mechanism and its models, updated as visits occur.
    horizon : int
        Steps per actor.
    rng : np.random.Generator
        Action sampling and policy-shaping draws.
    total_steps : int
        Training length, for the bonus schedules.

    Returns
    -------
    tuple[Rollout, list[EpisodeRecord]]
        The rollout (advantages not yet computed) and the episodes finished
        during it.
    """
    cfg = exploration.config
    shape_cfg = cfg.shape_config()
    acting_policy = model.policy
    # One noisy copy of the policy acts for the whole rollout
    if cfg.kind == ExploreKind.PARAM_NOISE:
        acting_policy = perturb_parameters(model.policy, cfg.sigma, rng)

    rollout = Rollout.empty(
        horizon, pool.n_actors, pool.observation_size, pool.n_actions
    )
    records: list[EpisodeRecord] = []
    for t in range(horizon):
        progress = pool.global_step / total_steps
        observations = pool.observations.copy()
        chosen = act(
            acting_policy,
            model.value,
            observations,
            shape_cfg,
            exploration.novelty,
            rng,
        )
        results = pool.step(chosen.actions)
        # Learner rewards add the reward-side bonuses to the extrinsic reward
        next_observations = np.stack([r.observation for r in results]).astype(
            np.float64
        )
        rewards_ext = np.array([r.reward_ext for r in results], dtype=np.float64)
        rewards = learner_rewards(
            exploration,
            pool,
            observations,
            chosen.actions,
            next_observations,
            rewards_ext,
            progress,
        )
        # Autoencoder trains on the pairs just taken
        if cfg.kind == ExploreKind.STRUCTURED_SHAPING:
            for s, a in zip(observations, chosen.actions):
                train_autoencoder(exploration.novelty, s, int(a))

        rollout.observations[t] = observations
        rollout.actions[t] = chosen.actions
        rollout.behavior_log_probs[t] = chosen.behavior_log_probs
        rollout.epsilons[t] = chosen.epsilons
        rollout.shaped[t] = chosen.shaped
        rollout.rewards_ext[t] = rewards_ext
        rollout.rewards[t] = rewards
        rollout.values[t] = chosen.values
        # value of the true successor, taken before finished actors reset
        rollout.next_values[t] = forward(model.value, next_observations)[0][:, 0]
        rollout.terminated[t] = [r.terminated for r in results]
        rollout.truncated[t] = [r.truncated for r in results]
        records.extend(pool.finish_step(results, rewards))
    return rollout, records
