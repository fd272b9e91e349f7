import click
import pandas as pd

from commands.common import (
    build_experiment,
    parse_dims,
    parse_epsilon,
    parse_float_list,
    parse_int_list,
    parse_rank_grid,
    sibling,
)
from logging_utils import log_action
from services.experiments import run_sweep
from utils.plotdata import emit_plotdata, write_sweep_csv


@click.command("sweep")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="key = value file with [sections]; flags override its keys")
@click.option("--train", help="CSV or IDX images")
@click.option("--train-labels", help="IDX labels for --train")
@click.option("--test", help="CSV or IDX images; split --train when omitted")
@click.option("--test-labels", help="IDX labels for --test")
@click.option("--dims", help="Tensor shape of one sample, e.g. 4x7x4x7")
@click.option("--method", type=click.Choice(["ttpca", "ttnpe", "pca", "knn"]))
@click.option("--tau", help="Threshold grid, e.g. 0.05,0.1,0.2")
@click.option("--ranks", multiple=True, help="Rank vector; repeat for a grid")
@click.option("--knn-k", help="K grid, e.g. 1,5,10")
@click.option("--noise-sigma", type=float)
@click.option("--seed", type=int)
@click.option("--classes", help="Keep only these labels, e.g. 1,2")
@click.option("--train-cap", type=int, help="Training samples per class")
@click.option("--test-cap", type=int, help="Test samples per class")
@click.option("--test-fraction", type=float, help="Test share when splitting a single file")
@click.option("--epsilon", help="Affinity scale or 'auto' (ttnpe)")
@click.option("--center/--no-center", default=None)
@click.option("--include-tnpe/--no-include-tnpe", default=None, help="Add TNPE storage-only rows (ttnpe)")
@click.option("--max-sweeps", type=int)
@click.option("--out", help="Sweep table CSV")
def sweep(config_path, **flags):
    """Fit and score every grid point; write the sweep table and plot data."""
    overrides = dict(flags)
    overrides["dims"] = parse_dims(flags["dims"])
    overrides["tau"] = parse_float_list(flags["tau"])
    overrides["ranks"] = parse_rank_grid(list(flags["ranks"]))
    overrides["knn_k"] = parse_int_list(flags["knn_k"])
    overrides["classes"] = parse_int_list(flags["classes"])
    overrides["epsilon"] = parse_epsilon(flags["epsilon"]) if flags["epsilon"] else None
    cfg = build_experiment(config_path, overrides)

    rows = run_sweep(cfg)
    table = write_sweep_csv(rows, cfg.out)
    plot_csv, plot_dat = emit_plotdata(rows, sibling(cfg.out, "_plot.csv"))

    frame = pd.DataFrame([row.model_dump() for row in rows])
    if not frame.empty:
        click.echo(frame.drop(columns=["wall_time_ms"]).to_string(index=False))
    log_action("SWEEP", {
        "method": cfg.method,
        "rows": len(rows),
        "table": str(table),
        "plot": [str(plot_csv), str(plot_dat)],
    }, source=cfg.train)
