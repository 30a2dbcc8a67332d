import sys
from pathlib import Path

import click
import polars as pl
import typer
from rich.console import Console
from rich.table import Table
from typing_extensions import Annotated

from src.perturb_explore.config import load_config, read_toml
from src.perturb_explore.constants import ExitCodes
from src.perturb_explore.episode_data_formatting import (
    EPISODE_SCHEMA,
    comparison_table,
    read_episode_logs,
    read_manifest,
    split_baseline,
    summarize_run,
)
from src.perturb_explore.episode_data_formatting import compare as compare_runs
from src.perturb_explore.errors import (
    AggregationError,
    ConfigurationError,
    DensityError,
    NumericalError,
    UsageError,
)
from src.perturb_explore.main_functions import run_experiment
from src.perturb_explore.main_functions import sweep as sweep_grid
from src.perturb_explore.plotting.learning_curves import plot_learning_curves
from src.perturb_explore.verification import CHECKS, verify as run_checks

console = Console()
app = typer.Typer(
    help="Perturbation-based exploration for policy-gradient agents.",
    no_args_is_help=True,
)

USAGE_ERRORS = (ConfigurationError, UsageError, DensityError, AggregationError)


def fail(error: Exception, code: int) -> typer.Exit:
    console.log(f"[red]{type(error).__name__}: {error}")
    return typer.Exit(code)


def split_dirs(runs: str) -> list[Path]:
    dirs = [Path(p.strip()) for p in runs.split(",") if p.strip()]
    if not dirs:
        raise typer.BadParameter("--runs needs at least one directory")
    return dirs


@app.command()
def train(
    config: Annotated[Path, typer.Option(help="Experiment TOML file")],
    seed: Annotated[
        int | None, typer.Option(help="Train this single seed instead of run.seeds")
    ] = None,
    steps: Annotated[
        int | None, typer.Option(help="Override run.total_steps")
    ] = None,
    out: Annotated[Path | None, typer.Option(help="Override run.out")] = None,
    set_: Annotated[
        list[str] | None,
        typer.Option(
            "--set",
            help="Override a config key, e.g. --set agent.step_size=1e-3. Repeatable.",
        ),
    ] = None,
):
    """Train one run per seed and write episode logs, checkpoints and a manifest."""
    try:
        cfg = load_config(config, seed=seed, steps=steps, out=out, overrides=set_)
        run_dir = run_experiment(cfg)
    except USAGE_ERRORS as e:
        raise fail(e, ExitCodes.USAGE)
    except NumericalError as e:
        raise fail(e, ExitCodes.NUMERICAL)
    if read_manifest(run_dir)["status"] != "ok":
        raise typer.Exit(ExitCodes.NUMERICAL)


@app.command()
def sweep(
    config: Annotated[Path, typer.Option(help="Base experiment TOML file")],
    grid: Annotated[
        Path,
        typer.Option(help='TOML file with a [grid] table: "<table>.<key>" = [values]'),
    ],
    out: Annotated[
        Path, typer.Option(help="Directory for cell runs and the grid table")
    ],
):
    """Run every cell of a config grid and report the best cell per variant."""
    try:
        axes = read_toml(grid).get("grid")
        if not isinstance(axes, dict):
            raise ConfigurationError(f"{grid} has no [grid] table")
        result = sweep_grid(read_toml(config), axes, out)
    except (ValueError, *USAGE_ERRORS) as e:
        raise fail(e, ExitCodes.USAGE)
    except NumericalError as e:
        raise fail(e, ExitCodes.NUMERICAL)
    for variant, best in result.best.items():
        console.log(
            f"Best {variant}: cell {best['cell']} {best['point']} "
            f"mean {best['mean']}"
        )


@app.command()
def compare(
    runs: Annotated[str, typer.Option(help="Comma-separated run directories")],
    out: Annotated[Path, typer.Option(help="CSV file for the comparison table")],
    baseline: Annotated[
        str | None,
        typer.Option(help="Baseline run name. Default: runs with explore kind none"),
    ] = None,
):
    """Compare last-100 means of variants against the baseline per environment."""
    try:
        summaries = [summarize_run(d) for d in split_dirs(runs)]
        rows = compare_runs(*split_baseline(summaries, baseline))
    except USAGE_ERRORS as e:
        raise fail(e, ExitCodes.USAGE)

    table = comparison_table(rows)
    out.parent.mkdir(parents=True, exist_ok=True)
    table.write_csv(out)

    rendered = Table(title="Mean extrinsic return of the last 100 episodes")
    for column in ("environment", "variant", "mean", "std", "beats baseline"):
        rendered.add_column(column)
    for row in rows:
        style = "bold" if row.is_winner else None
        rendered.add_row(
            row.environment,
            row.variant,
            f"{row.mean:.3f}",
            f"{row.std:.3f}",
            str(row.beats_baseline),
            style=style,
        )
    console.print(rendered)


@app.command()
def plot(
    runs: Annotated[str, typer.Option(help="Comma-separated run directories")],
    out: Annotated[Path, typer.Option(help="Figure file, e.g. curves.svg")],
    window: Annotated[
        int, typer.Option(help="Moving-average window in episodes")
    ] = 100,
):
    """Draw smoothed learning curves with a min/max band across seeds."""
    if window < 1:
        raise typer.BadParameter("--window must be at least 1")
    try:
        record_sets = {}
        for run_dir in split_dirs(runs):
            name = read_manifest(run_dir)["name"]
            try:
                record_sets[name] = read_episode_logs(run_dir)
            except AggregationError:
                record_sets[name] = pl.DataFrame(schema=EPISODE_SCHEMA)
        sidecar = plot_learning_curves(record_sets, window, out)
    except USAGE_ERRORS as e:
        raise fail(e, ExitCodes.USAGE)
    console.log(f"Saved {out} ({', '.join(sidecar['variants'])})")


@app.command()
def verify(
    check: Annotated[
        list[str] | None,
        typer.Option(help=f"Run only these checks: {', '.join(CHECKS)}. Repeatable."),
    ] = None,
):
    """Run the built-in gradient, counting, shaping and estimator checks."""
    unknown = sorted(set(check or []) - set(CHECKS))
    if unknown:
        raise typer.BadParameter(f"Unknown checks {unknown}")
    results = run_checks(check)
    if not all(r.passed for r in results):
        raise typer.Exit(ExitCodes.VERIFICATION)


def main() -> None:
    """Entry point mapping every failure onto the documented exit codes."""
    try:
        code = app(standalone_mode=False)
    except click.ClickException as e:
        e.show()
        code = ExitCodes.USAGE
    except click.Abort:
        code = ExitCodes.USAGE
    sys.exit(code if isinstance(code, int) else ExitCodes.OK)


if __name__ == "__main__":
    main()
