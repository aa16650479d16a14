"""Numerical laboratory for weighted L2 smoothing estimates of (fractional)
Schroedinger propagators with Kerman-Sawyer weights."""

from kssmooth.errors import (
    AnnulusExceedsBox,
    DegenerateZeroMode,
    EmptyWeight,
    InvalidParameters,
    InvalidWeight,
    KsSmoothError,
)

__version__ = "0.1.0"

__all__ = [
    "AnnulusExceedsBox",
    "DegenerateZeroMode",
    "EmptyWeight",
    "InvalidParameters",
    "InvalidWeight",
    "KsSmoothError",
]
