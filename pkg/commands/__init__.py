"""
Commands package for the TT subspace toolkit.
This module exports all the commands for easy registration in main.py
"""

from . import (
    classify,
    fit,
    inspect,
    storage,
    sweep,
)

__all__ = [
    "classify",
    "fit",
    "inspect",
    "storage",
    "sweep",
]
