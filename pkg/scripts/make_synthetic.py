import os
import sys

import click

# Add the project root to the import path
sys.path.append(os.getcwd())

from commands.common import parse_dims, parse_int_list
from services.synthetic import tt_class_dataset
from utils.datasets import save_csv, shuffle
from utils.logger import logger


@click.command()
@click.option("--dims", default="4x4x4", show_default=True)
@click.option("--ranks", default="2,2,3", show_default=True)
@click.option("--n-per-class", type=int, default=100, show_default=True)
@click.option("--classes", "n_classes", type=int, default=2, show_default=True)
@click.option("--noise-sigma", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", default="synthetic.csv", show_default=True)
def make_synthetic(dims, ranks, n_per_class, n_classes, noise_sigma, seed, out):
    """
    Writes a CSV dataset whose classes live in distinct random TT subspaces.
    """
    try:
        logger.info(f"Generating {n_classes} classes x {n_per_class} samples, dims={dims}, ranks={ranks}")
        ds, subspaces = tt_class_dataset(
            parse_dims(dims), parse_int_list(ranks), n_per_class, n_classes, noise_sigma, seed
        )
        save_csv(shuffle(ds, seed), out)
        logger.success(f"Wrote {ds.n_samples} samples of size {ds.ambient_dim} to '{out}'")
        for label, subspace in enumerate(subspaces):
            logger.info(f"class {label}: {subspace}")
    except Exception as e:
        logger.error(f"Error generating synthetic data: {e}")
        raise SystemExit(1)


if __name__ == "__main__":
    make_synthetic()
