"""
Utils package for the TT subspace toolkit.
This module exports the dataset and plot-data helpers used across the application.
"""

from .datasets import (
    LabeledDataset,
    add_noise,
    cap_per_class,
    filter_classes,
    load_csv,
    load_idx,
    save_csv,
    split_dataset,
)
from .plotdata import emit_plotdata, write_sweep_csv

__all__ = [
    "LabeledDataset",
    "add_noise",
    "cap_per_class",
    "filter_classes",
    "load_csv",
    "load_idx",
    "save_csv",
    "split_dataset",
    "emit_plotdata",
    "write_sweep_csv",
]
