import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import polars as pl
from rich.console import Console
from rich.progress import track

from src.perturb_explore.agents import (
    ActorCritic,
    ActorPool,
    EpisodeRecord,
    act,
    collect_rollout,
    compute_targets,
    update,
)
from src.perturb_explore.config import (
    ExperimentConfig,
    canonical_json,
    config_hash,
    set_key,
    validate_config,
)
from src.perturb_explore.constants import DeskScale
from src.perturb_explore.environments import make_env
from src.perturb_explore.episode_data_formatting import (
    aggregate_last100,
    read_episode_logs,
)
from src.perturb_explore.errors import AggregationError, NumericalError
from src.perturb_explore.exploration import ExplorationState, PolicyShapeConfig
from src.perturb_explore.numerics import save_checkpoint

console = Console()

MANIFEST = "manifest.json"
EVALUATIONS = "evaluations.csv"


def episode_log_path(run_dir: Path, seed: int) -> Path:
    return Path(run_dir) / f"episodes_seed{seed}.jsonl"


@dataclass
class SeedResult:
    seed: int
    status: str = "ok"
    message: str = ""
    episodes: int = 0
    last100_mean: float | None = None
    evaluations: list[dict[str, Any]] = field(default_factory=list)
    final_stats: dict[str, float] = field(default_factory=dict)


def append_episodes(path: Path, records: list[EpisodeRecord]) -> None:
    if not records:
        return
    with Path(path).open("ab") as f:
        pl.DataFrame([r.to_dict() for r in records]).write_ndjson(f)


def evaluation_episode(
    model: ActorCritic, env_id: str, seed: int, index: int
) -> tuple[float, int]:
    """
    One greedy episode with shaping and parameter noise off.

    Returns
    -------
    tuple[float, int]
        Extrinsic return and episode length.
    """
    env = make_env(env_id)
    reset_seed = int(np.random.SeedSequence([seed, index]).generate_state(1)[0])
    observation = env.reset(reset_seed)
    off = PolicyShapeConfig()
    rng = np.random.default_rng(0)
    total, length = 0.0, 0
    while True:
        chosen = act(
            model.policy,
            model.value,
            observation[None, :],
            off,
            None,
            rng,
            deterministic=True,
        )
        result = env.step(int(chosen.actions[0]))
        total += result.reward_ext
        length += 1
        if result.done:
            return total, length
        observation = result.observation


def train_seed(cfg: ExperimentConfig, seed: int, run_dir: Path) -> SeedResult:
    """
    Train one learner from scratch on ``seed``.

    Episode records are appended to ``episodes_seed<seed>.jsonl`` after every
    update, so a run that fails keeps the episodes it finished. Networks are
    checkpointed when training completes.

    Parameters
    ----------
    cfg : ExperimentConfig
        Validated experiment configuration.
    seed : int
        Root of every random stream of the run.
    run_dir : Path
        Directory receiving the log and the checkpoints.

    Returns
    -------
    SeedResult
    """
    agent = cfg.agent
    total_steps = cfg.run.total_steps
    log_path = episode_log_path(run_dir, seed)
    log_path.unlink(missing_ok=True)

    init_ss, act_ss, explore_ss, *actor_ss = np.random.SeedSequence(seed).spawn(
        3 + agent.n_actors
    )
    pool = ActorPool(cfg.env_id, agent.n_actors, seed, actor_ss)
    model = ActorCritic.create(
        pool.observation_size,
        pool.n_actions,
        agent.hidden,
        np.random.default_rng(init_ss),
        agent.step_size,
        agent.activation,
    )
    exploration = ExplorationState.create(
        cfg.explore,
        pool.observation_size,
        pool.n_actions,
        np.random.default_rng(explore_ss),
    )
    rng = np.random.default_rng(act_ss)

    result = SeedResult(seed=seed)
    returns: list[float] = []
    next_eval = cfg.run.eval_interval
    try:
        while pool.global_step < total_steps:
            progress = pool.global_step / total_steps
            rollout, records = collect_rollout(
                pool, model, exploration, agent.horizon, rng, total_steps
            )
            append_episodes(log_path, records)
            returns.extend(r.return_ext for r in records)
            rollout = compute_targets(rollout, agent)
            model, result.final_stats = update(model, rollout, agent, progress, rng)

            while cfg.run.eval_interval > 0 and pool.global_step >= next_eval:
                eval_return, eval_length = evaluation_episode(
                    model, cfg.env_id, seed, len(result.evaluations)
                )
                result.evaluations.append(
                    {
                        "seed": seed,
                        "global_step": pool.global_step,
                        "return_ext": eval_return,
                        "length": eval_length,
                    }
                )
                next_eval += cfg.run.eval_interval
    except NumericalError as e:
        result.status = "failed"
        result.message = str(e)
        console.log(f"[red]Seed {seed} failed at step {pool.global_step}: {e}")
    else:
        save_checkpoint(model.policy, Path(run_dir) / f"policy_seed{seed}.pxnn")
        save_checkpoint(model.value, Path(run_dir) / f"value_seed{seed}.pxnn")

    result.episodes = len(returns)
    if returns:
        result.last100_mean = float(np.mean(returns[-DeskScale.LAST_EPISODES_WINDOW :]))
    return result


def _train_seed_job(args: tuple[ExperimentConfig, int, Path]) -> SeedResult:
    return train_seed(*args)


def write_manifest(
    cfg: ExperimentConfig, run_dir: Path, results: list[SeedResult]
) -> dict[str, Any]:
    failed = [r for r in results if r.status != "ok"]
    manifest = {
        "name": cfg.variant,
        "environment": cfg.env_id,
        "explore_kind": cfg.explore.kind.value,
        "config": json.loads(canonical_json(cfg)),
        "config_hash": config_hash(cfg),
        "status": "failed" if failed else "ok",
        "seeds": [
            {
                "seed": r.seed,
                "status": r.status,
                "message": r.message,
                "episodes": r.episodes,
                "final_stats": r.final_stats,
                "log": episode_log_path(Path("."), r.seed).name,
            }
            for r in results
        ],
    }
    with (Path(run_dir) / MANIFEST).open("w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def clear_run_outputs(run_dir: Path) -> None:
    # outputs of an earlier run into the same directory
    stale = [run_dir / MANIFEST, run_dir / EVALUATIONS]
    for pattern in ("episodes_seed*.jsonl", "policy_seed*.pxnn", "value_seed*.pxnn"):
        stale.extend(run_dir.glob(pattern))
    for path in stale:
        path.unlink(missing_ok=True)


def run_experiment(cfg: ExperimentConfig) -> Path:
    """
    Train one run per configured seed and write its logs and manifest.

    Sets up the run directory
    ├── <run.out>/
    │   ├── manifest.json
    │   ├── episodes_seed<seed>.jsonl
    │   ├── policy_seed<seed>.pxnn
    │   ├── value_seed<seed>.pxnn
    │   ├── evaluations.csv            # only when run.eval_interval > 0

    Parameters
    ----------
    cfg : ExperimentConfig
        Validated configuration. Seeds run in ``run.workers`` processes.

    Returns
    -------
    Path
        The run directory.
    """
    run_dir = cfg.out_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    clear_run_outputs(run_dir)
    console.log(
        f"Training {cfg.variant} on {cfg.env_id} for {cfg.run.total_steps} steps "
        f"x {len(cfg.run.seeds)} seeds into {run_dir}"
    )

    jobs = [(cfg, seed, run_dir) for seed in cfg.run.seeds]
    if cfg.run.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.run.workers) as executor:
            results = list(executor.map(_train_seed_job, jobs))
    else:
        results = [
            _train_seed_job(job)
            for job in track(jobs, description=f"Training {cfg.variant}")
        ]

    for r in results:
        if r.status == "ok":
            console.log(
                f"Seed {r.seed}: {r.episodes} episodes, last-100 mean {r.last100_mean}"
            )

    evaluations = [row for r in results for row in r.evaluations]
    if evaluations:
        pl.DataFrame(evaluations).write_csv(run_dir / EVALUATIONS)

    manifest = write_manifest(cfg, run_dir, results)
    if manifest["status"] != "ok":
        console.log(f"[red]Run {cfg.variant} marked failed in {run_dir / MANIFEST}")
    return run_dir


@dataclass
class SweepResult:
    grid: pl.DataFrame
    best: dict[str, dict[str, Any]]


def flatten_axes(axes: dict[str, Any]) -> dict[str, Any]:
    """Unquoted dotted keys in a grid file arrive as nested tables; flatten them."""
    flat = {}
    for key, values in axes.items():
        if isinstance(values, dict):
            flat.update({f"{key}.{inner}": v for inner, v in values.items()})
        else:
            flat[key] = values
    return flat


def grid_cells(
    base_raw: dict[str, Any], axes: dict[str, list[Any]], out: Path
) -> list[tuple[dict[str, Any], ExperimentConfig]]:
    """
    Every point of the Cartesian grid over ``axes``, validated before any run
    starts. Cell ``i`` writes to ``<out>/cell_<i>``.
    """
    axes = flatten_axes(axes)
    if not axes or any(not isinstance(v, list) or not v for v in axes.values()):
        raise ValueError("Every grid axis must be a nonempty list of values")
    keys = list(axes)
    cells = []
    for i, values in enumerate(itertools.product(*(axes[k] for k in keys))):
        raw = base_raw
        point = dict(zip(keys, values))
        for key, value in point.items():
            raw = set_key(raw, key, value)
        raw = set_key(raw, "run.out", str(Path(out) / f"cell_{i}"))
        cells.append((point, validate_config(raw)))
    return cells


def sweep(
    base_raw: dict[str, Any], axes: dict[str, list[Any]], out: Path
) -> SweepResult:
    """
    Run the full grid and pick the best cell per variant by cross-seed
    last-100 mean.

    Parameters
    ----------
    base_raw : dict
        Raw experiment mapping the grid values are written into.
    axes : dict[str, list]
        Dotted config key to the values it takes.
    out : Path
        Receives ``cell_<i>/`` run directories, ``grid.csv`` and ``best.json``.

    Returns
    -------
    SweepResult
        The full grid table and the best cell of every variant. Ties go to the
        lower cell index.
    """
    out = Path(out)
    cells = grid_cells(base_raw, axes, out)
    out.mkdir(parents=True, exist_ok=True)
    console.log(f"Sweeping {len(cells)} cells over {list(axes)}")

    rows = []
    best: dict[str, dict[str, Any]] = {}
    for i, (point, cfg) in enumerate(cells):
        run_dir = run_experiment(cfg)
        mean, std = None, None
        try:
            summary = aggregate_last100(read_episode_logs(run_dir))
            mean, std = summary.mean, summary.std
        except AggregationError as e:
            console.log(f"[yellow]Cell {i} has nothing to aggregate: {e}")
        rows.append(
            {
                "cell": i,
                **{key: str(value) for key, value in point.items()},
                "variant": cfg.variant,
                "mean": mean,
                "std": std,
            }
        )
        console.log(f"Cell {i} {point}: mean {mean}")

        if mean is not None and (
            cfg.variant not in best or mean > best[cfg.variant]["mean"]
        ):
            best[cfg.variant] = {
                "cell": i,
                "mean": mean,
                "std": std,
                "point": point,
                "config": cfg.to_raw(),
            }

    grid = pl.DataFrame(rows, schema_overrides={"mean": pl.Float64, "std": pl.Float64})
    grid.write_csv(out / "grid.csv")
    with (out / "best.json").open("w") as f:
        json.dump(best, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    return SweepResult(grid=grid, best=best)

