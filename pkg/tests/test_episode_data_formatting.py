import json
from pathlib import Path

import polars as pl
import polars.testing
import pytest

from src.perturb_explore.episode_data_formatting import (
    EPISODE_SCHEMA,
    aggregate_last100,
    compare,
    comparison_table,
    learning_curve_data,
    read_episode_logs,
    split_baseline,
    summarize_run,
)
from src.perturb_explore.errors import AggregationError


def episodes(seed: int, returns: list[float], step: int = 10) -> pl.DataFrame:
    n = len(returns)
    return pl.DataFrame(
        {
            "seed": [seed] * n,
            "episode": list(range(n)),
            "global_step": [step * (i + 1) for i in range(n)],
            "return_ext": returns,
            "return_learner": returns,
            "length": [step] * n,
        },
        schema=EPISODE_SCHEMA,
    )


def write_run(
    run_dir: Path,
    seed_returns: dict[int, list[float]],
    name: str,
    environment: str = "chain:40",
    explore_kind: str = "sporadic-rewards",
) -> Path:
    run_dir.mkdir(parents=True)
    for seed, returns in seed_returns.items():
        episodes(seed, returns).write_ndjson(run_dir / f"episodes_seed{seed}.jsonl")
    manifest = {"name": name, "environment": environment, "explore_kind": explore_kind}
    (run_dir / "manifest.json").write_text(json.dumps(manifest))
    return run_dir


def test_read_episode_logs(tmp_path):
    run = write_run(tmp_path / "run", {2: [0.0, 1.0], 1: [3.0]}, "a")
    got = read_episode_logs(run)
    want = pl.concat([episodes(1, [3.0]), episodes(2, [0.0, 1.0])])
    polars.testing.assert_frame_equal(got, want)


def test_read_episode_logs_empty(tmp_path):
    with pytest.raises(AggregationError):
        read_episode_logs(tmp_path)


def test_last100_uses_final_episodes():
    records = episodes(1, [0.0] * 50 + [1.0] * 100)
    summary = aggregate_last100(records)
    assert summary.mean == 1.0
    assert summary.std == 0.0


def test_last100_short_runs_use_every_episode():
    records = pl.concat([episodes(1, [1.0, 2.0, 3.0]), episodes(2, [4.0])])
    summary = aggregate_last100(records)
    assert summary.seed_means["last100_mean"].to_list() == [2.0, 4.0]
    assert summary.mean == 3.0
    # sample standard deviation
    assert summary.std == pytest.approx(2**0.5)


def test_last100_empty():
    with pytest.raises(AggregationError):
        aggregate_last100(pl.DataFrame(schema=EPISODE_SCHEMA))


@pytest.fixture
def chain_runs(tmp_path) -> list:
    base = write_run(
        tmp_path / "base", {1: [0.2, 0.2], 2: [0.4]}, "baseline", explore_kind="none"
    )
    better = write_run(tmp_path / "better", {1: [0.9], 2: [0.7]}, "sporadic")
    worse = write_run(tmp_path / "worse", {1: [0.1], 2: [0.1]}, "count")
    return [summarize_run(d) for d in (base, better, worse)]


def test_split_baseline(chain_runs):
    baseline, variants = split_baseline(chain_runs)
    assert [s.variant for s in baseline] == ["baseline"]
    baseline, variants = split_baseline(chain_runs, baseline="count")
    assert [s.variant for s in baseline] == ["count"]
    assert [s.variant for s in variants] == ["baseline", "sporadic"]


def test_compare(chain_runs):
    rows = compare(*split_baseline(chain_runs))
    assert [r.variant for r in rows] == ["baseline", "sporadic", "count"]
    assert [r.beats_baseline for r in rows] == [False, True, False]
    assert [r.is_winner for r in rows] == [False, True, False]
    assert rows[1].mean == pytest.approx(0.8)
    assert rows[0].seed_means == pytest.approx((0.2, 0.4))


def test_compare_ties_go_to_baseline(tmp_path):
    base = write_run(tmp_path / "b", {1: [0.5]}, "baseline", explore_kind="none")
    tied = write_run(tmp_path / "t", {1: [0.5]}, "tied")
    rows = compare(*split_baseline([summarize_run(base), summarize_run(tied)]))
    assert [r.is_winner for r in rows] == [True, False]
    assert not rows[1].beats_baseline


def test_compare_mismatched_environments(tmp_path):
    base = write_run(tmp_path / "b", {1: [0.5]}, "baseline", explore_kind="none")
    other = write_run(tmp_path / "o", {1: [0.5]}, "other", environment="bandit:2")
    with pytest.raises(AggregationError):
        compare(*split_baseline([summarize_run(base), summarize_run(other)]))


def test_comparison_table(chain_runs):
    table = comparison_table(compare(*split_baseline(chain_runs)))
    assert table.columns == [
        "environment",
        "variant",
        "seed_means",
        "mean",
        "std",
        "beats_baseline",
        "is_winner",
    ]
    assert table["seed_means"][2] == "0.1;0.1"


def test_learning_curve_band():
    records = pl.concat(
        [
            episodes(1, [0.0, 2.0, 4.0, 6.0], step=10),
            episodes(2, [1.0, 1.0, 1.0, 1.0], step=20),
        ]
    )
    curve = learning_curve_data(records, window=1, n_points=3)
    # Grid runs from the first step where both seeds have an episode to the end.
    assert curve["global_step"].to_list() == [20, 50, 80]
    assert curve["min"].to_list() == [1.0, 1.0, 1.0]
    assert curve["max"].to_list() == [2.0, 6.0, 6.0]
    assert curve["mean"].to_list() == [1.5, 3.5, 3.5]


def test_learning_curve_smoothing():
    curve = learning_curve_data(episodes(1, [0.0, 2.0, 4.0]), window=2, n_points=3)
    assert curve["mean"].to_list() == [0.0, 1.0, 3.0]


def test_learning_curve_rejects():
    with pytest.raises(ValueError):
        learning_curve_data(episodes(1, [1.0]), window=0)
    with pytest.raises(AggregationError):
        learning_curve_data(pl.DataFrame(schema=EPISODE_SCHEMA), window=1)
