import click

from commands.common import echo_json, parse_dims, parse_int_list
from services.tt_model import (
    dim_pca,
    integer_root,
    manifold_dim_ttpca,
    storage_embedding,
    storage_pca,
    storage_tnpe,
    storage_tpca,
    storage_ttnpe,
    storage_ttpca,
)
from utils.errors import UsageError


def equal_dims_reports(d: int, n: int, r: int, n_train: int, variant: str = "appendix") -> list:
    size = integer_root(d, n)
    return [
        storage_embedding("KNN", d, n, r, n_train),
        storage_embedding("TNPE", d, n, r, n_train),
        storage_embedding("TT-NPE", d, n, r, n_train),
        storage_pca(d, r, n_train),
        storage_ttpca((size,) * n, (r,) * n, n_train),
        storage_tpca((size,) * n, (r,) * n, n_train, variant=variant),
    ]


def general_reports(dims: tuple, ranks: list, n_train: int, tnpe_rank: int | None) -> list:
    d = 1
    for size in dims:
        d *= size
    reports = [
        storage_embedding("KNN", d, len(dims), 0, n_train),
        storage_ttnpe(dims, ranks, n_train),
        storage_pca(d, ranks[-1], n_train),
        storage_ttpca(dims, ranks, n_train),
        storage_tpca(dims, ranks, n_train, variant="appendix"),
    ]
    if tnpe_rank is not None:
        reports.insert(1, storage_tnpe(dims, tnpe_rank, n_train))
    return reports


@click.command("storage")
@click.option("--d", "d", type=int, help="Ambient dimension (equal dims)")
@click.option("--n", "n", type=int, help="Number of modes (equal dims)")
@click.option("--r", "r", type=int, help="Rank (equal dims), or the TNPE rank with --dims")
@click.option("--dims", help="General tensor shape, e.g. 4x7x4x7")
@click.option("--ranks", help="General rank vector r1,...,rn")
@click.option("--n-train", type=int, default=1, show_default=True)
@click.option("--tpca-variant", type=click.Choice(["appendix", "main"]), default="appendix", show_default=True)
def storage(d, n, r, dims, ranks, n_train, tpca_variant):
    """Parameter counts and compression ratios of every method."""
    if dims:
        shape = parse_dims(dims)
        rank_vector = parse_int_list(ranks)
        if not rank_vector:
            raise UsageError("--dims needs --ranks")
        reports = general_reports(shape, rank_vector, n_train, r)
        extra = {"manifold_dim_ttpca": manifold_dim_ttpca(shape, rank_vector)}
    else:
        if None in (d, n, r):
            raise UsageError("give either --d/--n/--r or --dims/--ranks")
        reports = equal_dims_reports(d, n, r, n_train, tpca_variant)
        size = integer_root(d, n)
        extra = {"dim_pca": dim_pca(d, r), "manifold_dim_ttpca": manifold_dim_ttpca((size,) * n, (r,) * n)}

    echo_json({"reports": [report.model_dump() for report in reports], **extra})
