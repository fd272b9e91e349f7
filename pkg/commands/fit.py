from dataclasses import replace

import click

from commands.common import (
    echo_json,
    parse_dims,
    parse_epsilon,
    parse_float_list,
    parse_int_list,
    parse_rank_grid,
    validated,
)
from logging_utils import log_action
from models import TTNPEConfig, TTPCAConfig
from services import tt_npe, tt_pca
from services.experiments import classifier_storage, load_labeled
from services.tt_model import storage_ttnpe
from utils.datasets import add_noise, cap_per_class, shuffle
from utils.errors import UsageError


def _single(values, name: str):
    if values and len(values) > 1:
        raise UsageError(f"fit takes a single {name}, got {len(values)}")
    return values[0] if values else None


@click.command("fit")
@click.option("--train", required=True, type=click.Path(exists=True, dir_okay=False), help="CSV or IDX images")
@click.option("--train-labels", type=click.Path(exists=True, dir_okay=False), help="IDX labels for --train")
@click.option("--dims", help="Tensor shape of one sample, e.g. 4x7x4x7")
@click.option("--method", type=click.Choice(["ttpca", "pca", "ttnpe"]), default="ttpca", show_default=True)
@click.option("--tau", help="Relative singular value threshold (ttpca)")
@click.option("--ranks", help="Rank vector r1,...,rn (ttpca, ttnpe) or r (pca)")
@click.option("--knn-k", help="Neighbors of the affinity graph (ttnpe)")
@click.option("--epsilon", default="auto", show_default=True, help="Affinity scale or 'auto' (ttnpe)")
@click.option("--max-sweeps", type=int, default=20, show_default=True)
@click.option("--center/--no-center", default=False, help="Subtract per-class means (ttpca, pca)")
@click.option("--classes", help="Keep only these labels, e.g. 1,2")
@click.option("--train-cap", type=int, help="Samples per class")
@click.option("--noise-sigma", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Model file to write")
def fit(train, train_labels, dims, method, tau, ranks, knn_k, epsilon, max_sweeps, center, classes,
        train_cap, noise_sigma, seed, out):
    """Fit a TT-PCA / PCA classifier or a TT-NPE embedding and save it."""
    ds, original = load_labeled(train, train_labels, parse_dims(dims), parse_int_list(classes))
    if train_cap:
        ds = cap_per_class(shuffle(ds, seed), train_cap)
    ds = add_noise(ds, noise_sigma, seed)
    rank_vector = _single(parse_rank_grid([ranks] if ranks else None), "rank vector")
    tau_value = _single(parse_float_list(tau), "tau")

    if method == "ttpca":
        cfg = validated(TTPCAConfig, tau=tau_value, ranks=rank_vector, center=center)
        model = replace(tt_pca.fit_classifier(ds, cfg), labels=tuple(original.tolist()))
        tt_pca.save_class_model(model, out)
        storage = classifier_storage(model, ds, "ttpca")
        summary = {"classes": original.tolist(), "ranks": [list(f.ranks) for f in model.models]}
    elif method == "pca":
        if rank_vector is None or len(rank_vector) != 1:
            raise UsageError("pca needs --ranks with a single rank r")
        model = replace(tt_pca.fit_pca_classifier(ds, rank_vector[0], center), labels=tuple(original.tolist()))
        tt_pca.save_class_model(model, out)
        storage = classifier_storage(model, ds, "pca")
        summary = {"classes": original.tolist(), "ranks": [f.subspace.rank for f in model.models]}
    else:
        if rank_vector is None:
            raise UsageError("ttnpe needs --ranks")
        k = _single(parse_int_list(knn_k), "K") or 5
        cfg = validated(TTNPEConfig, ranks=rank_vector, k=k, epsilon=parse_epsilon(epsilon), max_sweeps=max_sweeps)
        model = replace(tt_npe.fit(ds, cfg), class_values=tuple(original.tolist()))
        tt_npe.save_npe_model(model, out)
        storage = storage_ttnpe(ds.dims, rank_vector, ds.n_samples).total_storage
        summary = {
            "classes": original.tolist(),
            "ranks": list(model.subspace.ranks),
            "objective": model.objective,
            "trace": model.trace_value,
            "lower_bound": model.lower_bound,
            "sweeps": model.sweeps,
        }

    summary.update({
        "method": method,
        "model": str(out),
        "dims": list(ds.dims),
        "n_train": ds.n_samples,
        "storage": int(storage),
        "compression_ratio": storage / (ds.n_samples * ds.ambient_dim),
    })
    log_action("FIT", summary, source=str(train))
    echo_json(summary)
