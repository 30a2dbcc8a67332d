import numpy as np
import pytest

from src.perturb_explore.environments import (
    BanditEnv,
    ChainMdp,
    ChainMdpConfig,
    SparseCartPole,
    TabularMdpEnv,
    make_env,
    random_mdp,
    value_iteration,
)
from src.perturb_explore.environments.tabular import (
    RandomMdp,
    action_values,
    best_policy_by_enumeration,
    read_mdp_table,
    write_mdp_table,
)
from src.perturb_explore.errors import ConfigurationError, UsageError


@pytest.mark.parametrize(
    "env_id, n_actions, observation_size",
    [
        ("sparse-cartpole", 3, 5),
        ("chain:10", 2, 10),
        ("random-mdp:5x3:7", 3, 5),
        ("bandit:4", 4, 1),
    ],
)
def test_make_env(env_id: str, n_actions: int, observation_size: int):
    env = make_env(env_id)
    assert env.n_actions == n_actions
    assert env.observation_size == observation_size
    assert env.reset(seed=0).shape == (observation_size,)


@pytest.mark.parametrize("env_id", ["cartpole", "chain:", "chain:2", "bandit:1", ""])
def test_make_env_rejects(env_id: str):
    with pytest.raises(ConfigurationError):
        make_env(env_id)


@pytest.mark.parametrize("env_id", ["sparse-cartpole", "chain:10", "random-mdp:4x2:1"])
def test_reset_is_deterministic(env_id: str):
    def trajectory():
        env = make_env(env_id)
        obs = [env.reset(seed=3)]
        for t in range(20):
            result = env.step(t % env.n_actions)
            obs.append(result.observation)
            if result.done:
                break
        return np.array(obs)

    np.testing.assert_array_equal(trajectory(), trajectory())


@pytest.mark.parametrize("action", [-1, 2, 1.0, True])
def test_invalid_actions(action):
    env = ChainMdp(ChainMdpConfig(length=5))
    env.reset(seed=0)
    with pytest.raises(UsageError):
        env.step(action)


def test_step_after_episode_end():
    env = BanditEnv()
    env.reset(seed=0)
    assert env.step(0).terminated
    with pytest.raises(UsageError):
        env.step(0)


def test_chain_goal_and_left_reward():
    env = ChainMdp(ChainMdpConfig(length=5))
    env.reset(seed=0)
    left = env.step(0)
    assert left.reward_ext == pytest.approx(0.001)
    assert not left.done
    for _ in range(4):
        result = env.step(1)
    assert result.reward_ext == 1.0
    assert result.terminated and not result.truncated


def test_chain_truncates():
    env = ChainMdp(ChainMdpConfig(length=4))
    env.reset(seed=0)
    results = [env.step(0) for _ in range(8)]
    assert results[-1].truncated and not results[-1].terminated
    assert not any(r.done for r in results[:-1])


def test_cartpole_starts_hanging():
    env = SparseCartPole()
    obs = env.reset(seed=0)
    assert obs[2] == pytest.approx(-1.0, abs=1e-2)
    result = env.step(1)
    assert result.reward_ext == 0.0


def test_cartpole_hanging_pole_stays_down():
    env = SparseCartPole()
    env.reset(seed=5)
    for _ in range(100):
        result = env.step(1)
        assert abs(env.state[2] - np.pi) < 0.2
        assert result.reward_ext == 0.0
    assert not result.done


def test_cartpole_upright_reward():
    env = SparseCartPole()
    env.reset(seed=0)
    env.state = np.array([0.0, 0.0, 0.0, 0.0])
    result = env.step(1)
    assert result.observation[2] >= env.config.success_threshold
    assert result.reward_ext == 1.0

    env.reset(seed=0)
    env.state = np.array([env.config.x_limit + 0.1, 0.0, 0.0, 0.0])
    result = env.step(1)
    assert result.terminated
    assert result.reward_ext == 0.0


def test_cartpole_leaving_track_terminates():
    env = SparseCartPole()
    env.reset(seed=0)
    for _ in range(env.config.max_steps):
        result = env.step(2)
        if result.done:
            break
    assert result.terminated
    assert abs(env.state[0]) > env.config.x_limit


def test_cartpole_discretize_clips():
    env = SparseCartPole()
    cell = env.discretize(np.array([100.0, -100.0, 1.0, -1.0, 0.0]))
    assert cell == (env.bins - 1, 0, env.bins - 1, 0, env.bins // 2)


def test_bandit_rewards():
    env = make_env("bandit:3")
    env.reset(seed=0)
    assert env.step(0).reward_ext == 1.0
    env.reset(seed=0)
    assert env.step(2).reward_ext == 0.0


def test_random_mdp_is_stochastic():
    mdp = random_mdp(6, 3, seed=1)
    np.testing.assert_allclose(mdp.transitions.sum(axis=2), 1.0, atol=1e-12)
    assert np.all(mdp.transitions >= 0)


def test_non_stochastic_mdp_rejected():
    transitions = np.full((2, 1, 2), 0.4)
    mdp = RandomMdp(transitions=transitions, rewards=np.zeros((2, 1)), gamma=0.9)
    with pytest.raises(ConfigurationError):
        value_iteration(mdp)


@pytest.mark.parametrize("seed", range(5))
def test_value_iteration_is_optimal(seed: int):
    mdp = random_mdp(4, 2, seed=seed)
    result = value_iteration(mdp)
    bellman = action_values(mdp, result.values).max(axis=1)
    assert np.max(np.abs(bellman - result.values)) <= mdp.gamma * 1e-10
    best_values, _ = best_policy_by_enumeration(mdp)
    np.testing.assert_allclose(result.values, best_values, atol=1e-8)


def test_value_iteration_tie_breaks_low():
    transitions = np.ones((1, 3, 1))
    mdp = RandomMdp(transitions=transitions, rewards=np.ones((1, 3)), gamma=0.5)
    result = value_iteration(mdp)
    assert result.policy.tolist() == [0]
    assert result.values[0] == pytest.approx(2.0)


def test_tabular_env_truncates():
    env = TabularMdpEnv(random_mdp(3, 2, seed=0), max_steps=5)
    env.reset(seed=0)
    results = [env.step(0) for _ in range(5)]
    assert results[-1].truncated
    assert not any(r.terminated for r in results)


def test_mdp_table(tmp_path):
    mdp = random_mdp(3, 2, seed=4, gamma=0.95)
    path = tmp_path / "mdp.csv"
    write_mdp_table(mdp, path)
    loaded = read_mdp_table(path)
    np.testing.assert_allclose(loaded.transitions, mdp.transitions)
    np.testing.assert_allclose(loaded.rewards, mdp.rewards)
    assert loaded.gamma == 0.95


def test_chain_goal_from_start():
    env = ChainMdp()
    assert env.reset(seed=123).argmax() == 1
    results = [env.step(1) for _ in range(38)]
    assert env.position == 39
    assert results[-1].reward_ext == 1.0
    assert results[-1].terminated


def test_value_iteration_geometric_series():
    single = np.ones((1, 1, 1))
    mdp = RandomMdp(transitions=single, rewards=np.ones((1, 1)), gamma=0.9)
    assert value_iteration(mdp).values[0] == pytest.approx(10.0)
    zero = RandomMdp(transitions=single, rewards=np.zeros((1, 1)), gamma=0.9)
    assert value_iteration(zero).values[0] == 0.0
