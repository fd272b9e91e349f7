from pathlib import Path

import click

from commands.common import echo_json, model_kind
from services import tt_npe, tt_pca
from services.tt_model import TTSubspace, deserialize, manifold_dim_ttpca, storage_ttpca


def describe_subspace(subspace: TTSubspace) -> dict:
    return {
        "dims": list(subspace.dims),
        "ranks": list(subspace.ranks),
        "ambient_dim": subspace.ambient_dim,
        "orthonormal": subspace.orthonormal,
        "core_orthonormality_error": subspace.core_orthonormality_error(),
        "parameters": storage_ttpca(subspace.dims, subspace.ranks[1:]).subspace_dim,
        "manifold_dim": manifold_dim_ttpca(subspace.dims, subspace.ranks[1:]),
    }


@click.command("inspect")
@click.argument("model_path", type=click.Path(exists=True, dir_okay=False))
def inspect(model_path):
    """Dump the metadata of a saved subspace, classifier or embedding."""
    kind = model_kind(model_path)
    info = {"model": str(model_path), "kind": kind, "bytes": Path(model_path).stat().st_size}
    if kind == "subspace":
        info["subspace"] = describe_subspace(deserialize(Path(model_path).read_bytes()))
    elif kind == "classifier":
        model = tt_pca.load_class_model(model_path)
        info["dims"] = list(model.dims)
        info["centered"] = any(fitted.mean is not None for fitted in model.models)
        info["classes"] = [
            {"label": int(c), "n_train": fitted.representation.shape[1], **describe_subspace(fitted.subspace)}
            for c, fitted in zip(model.label_values, model.models)
        ]
    else:
        model = tt_npe.load_npe_model(model_path)
        info["subspace"] = describe_subspace(model.subspace)
        info["n_train"] = model.n_samples
        info["labels"] = model.label_values.tolist()
        info["objective"] = model.objective
    echo_json(info)
