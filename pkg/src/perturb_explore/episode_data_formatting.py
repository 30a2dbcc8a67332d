import json
from dataclasses import dataclass
from pathlib import Path

import duckdb
import numpy as np
import polars as pl

from src.perturb_explore.constants import DeskScale
from src.perturb_explore.errors import AggregationError

EPISODE_SCHEMA = {
    "seed": pl.UInt64,
    "episode": pl.Int64,
    "global_step": pl.Int64,
    "return_ext": pl.Float64,
    "return_learner": pl.Float64,
    "length": pl.Int64,
}


def read_episode_logs(run_dir: Path) -> pl.DataFrame:
    """
    Read every ``episodes_seed*.jsonl`` file of a run into one table.

    Parameters
    ----------
    run_dir : Path
        Run directory written by `run_experiment`.

    Returns
    -------
    pl.DataFrame
        One row per episode, sorted by seed and episode index.

    Raises
    ------
    AggregationError
        When the run holds no episode logs.
    """
    run_dir = Path(run_dir)
    if not any(run_dir.glob("episodes_seed*.jsonl")):
        raise AggregationError(f"No episode logs in {run_dir}")
    pattern = str(run_dir / "episodes_seed*.jsonl")

    # duckdb reads the glob in one pass; polars only reads one ndjson file at a time
    conn = duckdb.connect()
    return (
        conn.sql(
            f"SELECT * FROM read_json('{pattern}', format='newline_delimited', "
            "auto_detect=true)"
        )
        .pl()
        .select(list(EPISODE_SCHEMA))
        .cast(EPISODE_SCHEMA)
        .sort(["seed", "episode"])
    )


def read_manifest(run_dir: Path) -> dict:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        raise AggregationError(f"{run_dir} has no manifest.json")
    with path.open() as f:
        return json.load(f)


@dataclass
class Last100:
    """Per-seed last-episodes means and their cross-seed mean and sample std."""

    seed_means: pl.DataFrame
    mean: float
    std: float


def aggregate_last100(
    records: pl.DataFrame, window: int = DeskScale.LAST_EPISODES_WINDOW
) -> Last100:
    """
    Mean extrinsic return of the final ``min(window, episodes)`` episodes of
    every seed, then the mean and sample standard deviation across seeds (0 for
    a single seed).
    """
    if records.is_empty():
        raise AggregationError("Cannot aggregate an empty record set")
    seed_means = (
        records.sort(["seed", "episode"])
        .group_by("seed", maintain_order=True)
        .agg(pl.col("return_ext").tail(window).mean().alias("last100_mean"))
    )
    means = seed_means["last100_mean"].to_numpy()
    std = float(np.std(means, ddof=1)) if len(means) > 1 else 0.0
    return Last100(seed_means=seed_means, mean=float(means.mean()), std=std)


@dataclass
class RunSummary:
    environment: str
    variant: str
    explore_kind: str
    last100: Last100


def summarize_run(run_dir: Path) -> RunSummary:
    manifest = read_manifest(run_dir)
    return RunSummary(
        environment=manifest["environment"],
        variant=manifest["name"],
        explore_kind=manifest["explore_kind"],
        last100=aggregate_last100(read_episode_logs(run_dir)),
    )


@dataclass
class ComparisonRow:
    environment: str
    variant: str
    seed_means: tuple[float, ...]
    mean: float
    std: float
    beats_baseline: bool
    is_winner: bool = False


def split_baseline(
    summaries: list[RunSummary], baseline: str | None = None
) -> tuple[list[RunSummary], list[RunSummary]]:
    """Baseline runs are named ``baseline``, or default to explore kind ``none``."""
    is_baseline = [
        (s.variant == baseline) if baseline is not None else (s.explore_kind == "none")
        for s in summaries
    ]
    return (
        [s for s, b in zip(summaries, is_baseline) if b],
        [s for s, b in zip(summaries, is_baseline) if not b],
    )


def compare(
    baseline: list[RunSummary], variants: list[RunSummary]
) -> list[ComparisonRow]:
    """
    One row per (environment, run), baseline first.

    A variant beats the baseline when its cross-seed mean is strictly higher.
    The winner of an environment is the row with the highest mean; ties go to
    the baseline, then to the earlier variant.

    Raises
    ------
    AggregationError
        When the two sides cover different environments or an environment has
        more than one baseline run.
    """
    baseline_envs = {s.environment for s in baseline}
    variant_envs = {s.environment for s in variants}
    if baseline_envs != variant_envs:
        raise AggregationError(
            "Baseline and variants cover different environments: "
            f"only baseline {sorted(baseline_envs - variant_envs)}, "
            f"only variants {sorted(variant_envs - baseline_envs)}"
        )

    rows: list[ComparisonRow] = []
    for environment in sorted(baseline_envs):
        base = [s for s in baseline if s.environment == environment]
        if len(base) != 1:
            raise AggregationError(
                f"Expected one baseline run for {environment}, got {len(base)}"
            )
        env_rows = []
        for s in base + [v for v in variants if v.environment == environment]:
            env_rows.append(
                ComparisonRow(
                    environment=environment,
                    variant=s.variant,
                    seed_means=tuple(s.last100.seed_means["last100_mean"].to_list()),
                    mean=s.last100.mean,
                    std=s.last100.std,
                    beats_baseline=s is not base[0]
                    and s.last100.mean > base[0].last100.mean,
                )
            )
        winner = env_rows[0]
        for row in env_rows[1:]:
            if row.mean > winner.mean:
                winner = row
        winner.is_winner = True
        rows.extend(env_rows)
    return rows


def comparison_table(rows: list[ComparisonRow]) -> pl.DataFrame:
    return pl.DataFrame(
        {
            "environment": [r.environment for r in rows],
            "variant": [r.variant for r in rows],
            "seed_means": [";".join(repr(m) for m in r.seed_means) for r in rows],
            "mean": [r.mean for r in rows],
            "std": [r.std for r in rows],
            "beats_baseline": [r.beats_baseline for r in rows],
            "is_winner": [r.is_winner for r in rows],
        },
        schema={
            "environment": pl.String,
            "variant": pl.String,
            "seed_means": pl.String,
            "mean": pl.Float64,
            "std": pl.Float64,
            "beats_baseline": pl.Boolean,
            "is_winner": pl.Boolean,
        },
    )


def learning_curve_data(
    records: pl.DataFrame, window: int, n_points: int = DeskScale.CURVE_POINTS
) -> pl.DataFrame:
    """
    Smoothed extrinsic return of every seed on a shared grid of global steps,
    reduced to the cross-seed mean, min and max.

    Parameters
    ----------
    records : pl.DataFrame
        Episode records of one run (any number of seeds).
    window : int
        Trailing moving-average width in episodes; 1 leaves returns raw.
    n_points : int
        Grid size, from the step at which every seed has finished an episode
        to the last logged step.

    Returns
    -------
    pl.DataFrame
        Columns ``global_step``, ``mean``, ``min``, ``max``.
    """
    if window < 1:
        raise ValueError(f"Smoothing window must be >= 1, got {window}")
    if records.is_empty():
        raise AggregationError("Cannot draw a curve from an empty record set")
    # Trailing moving average within each seed, in episode order
    smoothed = records.sort(["seed", "episode"]).with_columns(
        smoothed=pl.col("return_ext")
        .rolling_mean(window_size=window, min_samples=1)
        .over("seed")
    )
    # Grid starts once every seed has logged an episode
    start = (
        smoothed.group_by("seed").agg(pl.col("global_step").min())["global_step"].max()
    )
    stop = smoothed["global_step"].max()
    steps = np.linspace(start, stop, n_points).round().astype(np.int64)
    grid = pl.DataFrame({"global_step": np.unique(steps)})

    # Carry each seed's latest smoothed return forward onto the grid
    per_seed = []
    for seed_records in smoothed.partition_by("seed", maintain_order=True):
        per_seed.append(
            grid.join_asof(
                seed_records.select(["global_step", "smoothed"]).sort("global_step"),
                on="global_step",
                strategy="backward",
            )
        )
    # Reduce across seeds at each grid step
    return (
        pl.concat(per_seed)
        .group_by("global_step")
        .agg(
            mean=pl.col("smoothed").mean(),
            min=pl.col("smoothed").min(),
            max=pl.col("smoothed").max(),
        )
        .sort("global_step")
    )
