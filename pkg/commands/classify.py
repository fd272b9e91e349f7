import click
import numpy as np
import pandas as pd

from commands.common import echo_json, model_kind, parse_dims, parse_int_list
from logging_utils import log_action
from services import tt_npe, tt_pca
from services.experiments import load_dataset
from utils.datasets import add_noise, relabel_against
from utils.errors import DataError, UsageError


@click.command("classify")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--test", required=True, type=click.Path(exists=True, dir_okay=False), help="CSV or IDX images")
@click.option("--test-labels", type=click.Path(exists=True, dir_okay=False), help="IDX labels for --test")
@click.option("--dims", help="Tensor shape of one sample; defaults to the model's")
@click.option("--knn-k", type=int, default=5, show_default=True, help="Neighbors for embedding models")
@click.option("--classes", help="Keep only test samples with these labels")
@click.option("--noise-sigma", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), help="Write per-sample predictions as CSV")
def classify(model_path, test, test_labels, dims, knn_k, classes, noise_sigma, seed, out):
    """Classify a labeled test set with a saved model and report the error rate."""
    kind = model_kind(model_path)
    if kind == "subspace":
        raise UsageError(f"{model_path} holds a bare subspace, not a classifier")

    if kind == "classifier":
        model = tt_pca.load_class_model(model_path)
        model_dims = model.dims
    else:
        model = tt_npe.load_npe_model(model_path)
        model_dims = model.subspace.dims
    original = model.label_values

    ds = load_dataset(test, test_labels, parse_dims(dims) or None)
    wanted = parse_int_list(classes)
    if wanted:
        ds = ds.subset(np.flatnonzero(np.isin(ds.labels, wanted)))
        if ds.n_samples == 0:
            raise DataError(f"No test samples with labels {sorted(set(wanted))}")
    ds = relabel_against(ds, original)
    if ds.ambient_dim != int(np.prod(model_dims)):
        raise DataError(f"Test samples have size {ds.ambient_dim}, model expects {int(np.prod(model_dims))}")
    ds = add_noise(ds, noise_sigma, seed)

    if kind == "classifier":
        predicted = tt_pca.classify_batch(model, ds.data)
    else:
        embedded = tt_npe.embed_batch(model, ds.data)
        predicted = tt_npe.predict_knn(model.embedded, model.labels, embedded, knn_k)

    error = float(np.mean(predicted != ds.labels))
    summary = {"model": str(model_path), "kind": kind, "n_test": ds.n_samples, "classification_error": error}
    if out:
        pd.DataFrame({
            "index": np.arange(ds.n_samples),
            "label": original[ds.labels],
            "predicted": original[predicted],
        }).to_csv(out, index=False)
        summary["predictions"] = str(out)
    log_action("CLASSIFY", summary, source=str(test))
    echo_json(summary)
