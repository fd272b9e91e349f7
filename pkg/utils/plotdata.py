"""
Sweep tables and plot data.

`emit_plotdata` writes `compression_ratio,error,method,log10_error` as CSV
and a gnuplot-friendly `.dat` file next to it (one block per method,
blocks separated by two blank lines so `index N` selects a method).
"""
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from models import SweepRow
from utils.errors import DataError

PLOT_COLUMNS = ["compression_ratio", "error", "method", "log10_error"]
SWEEP_COLUMNS = list(SweepRow.model_fields)


def _plot_frame(rows: Sequence[SweepRow]) -> pd.DataFrame:
    records = []
    for row in rows:
        error = row.classification_error
        if error is None:
            error = row.reconstruction_error
        log_error = float(np.log10(error)) if error else None
        records.append({
            "compression_ratio": row.compression_ratio,
            "error": error,
            "method": row.method,
            "log10_error": log_error,
        })
    return pd.DataFrame(records, columns=PLOT_COLUMNS)


def gnuplot_path(path) -> Path:
    return Path(path).with_suffix(".dat")


def emit_plotdata(rows: Sequence[SweepRow], path) -> tuple:
    """Write the CSV and gnuplot variants; returns both paths."""
    frame = _plot_frame(rows)
    path = Path(path)
    frame.to_csv(path, index=False, float_format="%.17g", na_rep="")

    dat = gnuplot_path(path)
    blocks = []
    for method, group in frame.groupby("method", sort=False):
        lines = [f"# method={method}"]
        for record in group.itertuples(index=False):
            error = "NaN" if record.error is None or pd.isna(record.error) else f"{record.error:.17g}"
            log_error = "NaN" if pd.isna(record.log10_error) else f"{record.log10_error:.17g}"
            lines.append(f"{record.compression_ratio:.17g} {error} {log_error}")
        blocks.append("\n".join(lines))
    header = "# compression_ratio error log10_error\n"
    dat.write_text(header + "\n\n\n".join(blocks) + ("\n" if blocks else ""))
    return path, dat


def read_plotdata(path) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, keep_default_na=True, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as e:
        raise DataError(f"Cannot read plot data {path}: {e}") from e
    if list(frame.columns) != PLOT_COLUMNS:
        raise DataError(f"{path}: unexpected header {list(frame.columns)}")
    return frame


def write_sweep_csv(rows: Sequence[SweepRow], path) -> Path:
    frame = pd.DataFrame([row.model_dump() for row in rows], columns=SWEEP_COLUMNS)
    path = Path(path)
    frame.to_csv(path, index=False, float_format="%.17g", na_rep="")
    return path


def read_sweep_csv(path) -> list:
    try:
        frame = pd.read_csv(path, keep_default_na=True, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as e:
        raise DataError(f"Cannot read sweep table {path}: {e}") from e
    frame = frame.astype(object).where(frame.notna(), None)
    rows = []
    for record in frame.to_dict(orient="records"):
        record["parameter"] = str(record["parameter"])
        if record["knn_k"] is not None:
            record["knn_k"] = int(record["knn_k"])
        rows.append(SweepRow(**record))
    return rows
