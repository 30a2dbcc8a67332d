import json
import warnings
from pathlib import Path

import altair as alt
import polars as pl

from src.perturb_explore.episode_data_formatting import learning_curve_data


def learning_curve_chart(curves: pl.DataFrame, window: int) -> alt.LayerChart:
    """
    Cross-seed mean as a line per variant over a min/max band.

    ``curves`` holds the `learning_curve_data` columns plus ``variant``.
    """
    # Shaded min/max band over seeds
    band = (
        alt.Chart(curves)
        .mark_errorband(opacity=0.2)
        .encode(
            x=alt.X("global_step:Q").title("Environment steps"),
            y=alt.Y("min:Q").title("").scale(zero=False),
            y2="max:Q",
            color=alt.Color("variant:N"),
        )
    )
    # Cross-seed mean on top of the band
    line = (
        alt.Chart(
            curves,
            title=f"Extrinsic return ({window}-episode moving average, min/max band)",
        )
        .mark_line(strokeWidth=2)
        .encode(
            x=alt.X("global_step:Q").title("Environment steps"),
            y=alt.Y("mean:Q").title("Extrinsic return").scale(zero=False),
            color=alt.Color("variant:N").title("Variant"),
        )
    )
    return (band + line).configure_legend(orient="bottom")


def plot_learning_curves(
    record_sets: dict[str, pl.DataFrame], window: int, out: Path
) -> dict:
    """
    Save one learning-curve figure for several runs.

    Parameters
    ----------
    record_sets : dict[str, pl.DataFrame]
        Variant name to its episode records.
    window : int
        Moving-average width in episodes.
    out : Path
        Figure path; the format follows the suffix (``.svg`` for vector
        output). A sidecar with the same stem and a ``.json`` suffix lists
        the plotted and skipped variants.

    Returns
    -------
    dict
        The sidecar content.
    """
    out = Path(out)
    curves, skipped = [], []
    for variant, records in record_sets.items():
        if records.is_empty():
            warnings.warn(f"No episodes for {variant}; left out of {out.name}")
            skipped.append(variant)
            continue
        curves.append(
            learning_curve_data(records, window).with_columns(variant=pl.lit(variant))
        )

    sidecar = {
        "figure": out.name,
        "window": window,
        "variants": [v for v in record_sets if v not in skipped],
        "skipped": skipped,
    }
    out.parent.mkdir(parents=True, exist_ok=True)
    if curves:
        learning_curve_chart(pl.concat(curves), window).save(str(out))
    else:
        warnings.warn(f"Every record set was empty; {out.name} not drawn")
    with out.with_suffix(".json").open("w") as f:
        json.dump(sidecar, f, indent=2)
        f.write("\n")
    return sidecar
