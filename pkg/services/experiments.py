"""
Compression-ratio sweeps: load and prepare a train/test pair, fit every grid
point, score it on the test set and collect one SweepRow per point.
"""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from tqdm import tqdm

from config import worker_count
from models import ExperimentConfig, SweepRow, TTNPEConfig, TTPCAConfig
from services import tt_npe, tt_pca
from services.tt_model import storage_pca, storage_tnpe, storage_ttnpe, storage_ttpca
from utils.datasets import (
    LabeledDataset,
    add_noise,
    cap_per_class,
    filter_classes,
    load_csv,
    load_idx,
    relabel_against,
    relabel_dense,
    shuffle,
    split_dataset,
)
from utils.errors import DataError, TTSSError, UsageError
from utils.logger import logger


@dataclass(frozen=True)
class SweepData:
    train: LabeledDataset        # as fitted (noisy when sigma > 0)
    test: LabeledDataset         # as classified (noisy when sigma > 0)
    clean_test: LabeledDataset
    original_labels: np.ndarray  # label value of each dense class index
    noisy: bool


# ============================================================================
# DATA PREPARATION
# ============================================================================

def load_dataset(path, labels_path=None, dims: Sequence[int] | None = None) -> LabeledDataset:
    """CSV by extension, otherwise an IDX image file paired with `labels_path`."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_csv(path, dims)
    if labels_path is None:
        raise UsageError(f"{path}: IDX images need a matching labels file")
    return load_idx(path, labels_path, dims)


def load_labeled(path, labels_path=None, dims=None, classes=None) -> tuple:
    """Load, keep `classes` (all when None) and relabel densely; returns (dataset, original labels)."""
    ds = load_dataset(path, labels_path, dims)
    if classes:
        return filter_classes(ds, classes)
    return relabel_dense(ds)


def _dense_labels(train: LabeledDataset, test: LabeledDataset, classes) -> tuple:
    if classes:
        train, wanted = filter_classes(train, classes)
        test, _ = filter_classes(test, classes)
        return train, test, wanted
    train, original = relabel_dense(train)
    return train, relabel_against(test, original), original


def prepare_data(cfg: ExperimentConfig) -> SweepData:
    train = load_dataset(cfg.train, cfg.train_labels, cfg.dims)
    if cfg.test:
        test = load_dataset(cfg.test, cfg.test_labels, cfg.dims)
    else:
        train, test = split_dataset(train, cfg.test_fraction, cfg.seed)
    if test.ambient_dim != train.ambient_dim:
        raise DataError(f"Train samples have size {train.ambient_dim}, test samples {test.ambient_dim}")

    train, test, original = _dense_labels(train, test, cfg.classes)
    train = cap_per_class(shuffle(train, cfg.seed), cfg.train_cap)
    test = cap_per_class(shuffle(test, cfg.seed + 1), cfg.test_cap)
    if test.n_samples == 0:
        raise DataError("Test set is empty")

    noisy = cfg.noise_sigma > 0
    logger.info(
        f"Prepared {train.n_samples} train / {test.n_samples} test samples, "
        f"dims={train.dims}, classes={original.tolist()}, sigma={cfg.noise_sigma}"
    )
    return SweepData(
        train=add_noise(train, cfg.noise_sigma, cfg.seed),
        test=add_noise(test, cfg.noise_sigma, cfg.seed + 1),
        clean_test=test,
        original_labels=original,
        noisy=noisy,
    )


# ============================================================================
# GRID POINTS
# ============================================================================

def _rank_label(ranks: Sequence[int]) -> str:
    return ",".join(str(r) for r in ranks)


def _error_rate(predicted: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(predicted != labels))


def _class_storage(model: tt_pca.ClassModel, ds: LabeledDataset, report) -> int:
    """Per-class subspace plus coefficients (plus the mean when centered)."""
    counts = np.bincount(ds.labels, minlength=model.n_classes)
    total = 0
    for fitted, count in zip(model.models, counts):
        total += report(fitted, int(count)).total_storage
        if fitted.mean is not None:
            total += ds.ambient_dim
    return total


def _score_classifier(model: tt_pca.ClassModel, data: SweepData, storage: int) -> dict:
    predicted = tt_pca.classify_batch(model, data.test.data)
    recon = None
    if data.noisy:
        recon = tt_pca.reconstruction_error(model, data.clean_test.data, data.test.data, data.test.labels)
    return {
        "compression_ratio": storage / (data.train.n_samples * data.train.ambient_dim),
        "classification_error": _error_rate(predicted, data.test.labels),
        "reconstruction_error": recon,
    }


def classifier_storage(model: tt_pca.ClassModel, ds: LabeledDataset, kind: str) -> int:
    """Stored parameters of a per-class TT-PCA (kind "ttpca") or PCA (kind "pca") classifier."""
    if kind == "ttpca":
        report = lambda fitted, count: storage_ttpca(
            fitted.subspace.dims, fitted.ranks[1:], count, include_coefficients=True
        )
    else:
        report = lambda fitted, count: storage_pca(
            fitted.subspace.ambient_dim, fitted.subspace.rank, count, include_coefficients=True
        )
    return _class_storage(model, ds, report)


def _ttpca_point(data: SweepData, cfg: TTPCAConfig) -> dict:
    model = tt_pca.fit_classifier(data.train, cfg)
    return _score_classifier(model, data, classifier_storage(model, data.train, "ttpca"))


def _pca_point(data: SweepData, rank: int, center: bool) -> dict:
    model = tt_pca.fit_pca_classifier(data.train, rank, center)
    return _score_classifier(model, data, classifier_storage(model, data.train, "pca"))


def _ttnpe_point(data: SweepData, cfg: TTNPEConfig) -> dict:
    model = tt_npe.fit(data.train, cfg)
    embedded = tt_npe.embed_batch(model, data.test.data)
    predicted = tt_npe.predict_knn(model.embedded, model.labels, embedded, cfg.k)
    report = storage_ttnpe(data.train.dims, cfg.ranks, data.train.n_samples)
    return {
        "compression_ratio": report.compression_ratio,
        "classification_error": _error_rate(predicted, data.test.labels),
    }


def _knn_point(data: SweepData, k: int) -> dict:
    predicted = tt_npe.predict_knn(data.train.data, data.train.labels, data.test.data, k)
    return {"compression_ratio": 1.0, "classification_error": _error_rate(predicted, data.test.labels)}


def _pca_rank(ranks: Sequence[int]) -> int:
    if len(ranks) > 1:
        logger.warning(f"PCA uses a single rank; taking r={ranks[-1]} from {_rank_label(ranks)}")
    return int(ranks[-1])


def grid_points(cfg: ExperimentConfig) -> list:
    """(method, parameter, knn_k, job) for every point of the configured grid."""
    points = []
    if cfg.method == "ttpca":
        for ranks in cfg.ranks:
            tt_cfg = TTPCAConfig(ranks=ranks, center=cfg.center)
            points.append(("ttpca", _rank_label(ranks), None, lambda d, c=tt_cfg: _ttpca_point(d, c)))
        for tau in cfg.tau:
            tt_cfg = TTPCAConfig(tau=tau, center=cfg.center)
            points.append(("ttpca", f"tau={tau:g}", None, lambda d, c=tt_cfg: _ttpca_point(d, c)))
    elif cfg.method == "pca":
        for ranks in cfg.ranks:
            rank = _pca_rank(ranks)
            points.append(("pca", f"r={rank}", None, lambda d, r=rank: _pca_point(d, r, cfg.center)))
    elif cfg.method == "ttnpe":
        for ranks in cfg.ranks:
            for k in cfg.knn_k:
                npe_cfg = TTNPEConfig(ranks=ranks, k=k, epsilon=cfg.epsilon, max_sweeps=cfg.max_sweeps)
                points.append(("ttnpe", _rank_label(ranks), k, lambda d, c=npe_cfg: _ttnpe_point(d, c)))
    elif cfg.method == "knn":
        for k in cfg.knn_k:
            points.append(("knn", "raw", k, lambda d, kk=k: _knn_point(d, kk)))
    return points


def tnpe_storage_rows(dims: Sequence[int], n_train: int) -> list:
    """Storage-only TNPE curve for every per-mode rank with ratio <= 1."""
    rows = []
    for r in range(1, min(dims) + 1):
        report = storage_tnpe(dims, r, n_train)
        if report.compression_ratio > 1:
            break
        rows.append(SweepRow(method="tnpe", parameter=f"r={r}", compression_ratio=report.compression_ratio,
                             storage_only=True))
    return rows


def _run_point(data: SweepData, method: str, parameter: str, knn_k, job: Callable) -> SweepRow:
    started = time.perf_counter()
    try:
        scores = job(data)
    except TTSSError as e:
        raise type(e)(f"{method} [{parameter}{f', K={knn_k}' if knn_k else ''}]: {e.detail}") from e
    elapsed = (time.perf_counter() - started) * 1000.0
    return SweepRow(method=method, parameter=parameter, knn_k=knn_k, wall_time_ms=elapsed, **scores)


def sort_rows(rows: Sequence[SweepRow]) -> list:
    return sorted(rows, key=lambda r: (r.compression_ratio, r.method, r.parameter, r.knn_k or 0))


def run_sweep(cfg: ExperimentConfig, data: SweepData | None = None) -> list:
    """Evaluate every grid point; rows come back sorted by compression ratio."""
    data = data or prepare_data(cfg)
    points = grid_points(cfg)
    logger.info(f"Sweep: {len(points)} {cfg.method} grid points")

    with ThreadPoolExecutor(max_workers=worker_count(len(points))) as pool:
        futures = [pool.submit(_run_point, data, *point) for point in points]
        rows = [future.result() for future in tqdm(futures, desc=f"sweep {cfg.method}", unit="pt", disable=None)]

    if cfg.include_tnpe and cfg.method == "ttnpe":
        rows.extend(tnpe_storage_rows(data.train.dims, data.train.n_samples))
    return sort_rows(rows)
