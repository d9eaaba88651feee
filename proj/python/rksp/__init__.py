"""Residual-stream spectral profiling (bindings to the C++ core)."""

from ._core import (
    Dataset,
    RkspError,
    auroc,
    container_format,
    ece,
    fisher_exact,
    kss_operator_gradient,
    profile,
    subsample_indices,
)

__all__ = [
    "Dataset",
    "RkspError",
    "auroc",
    "container_format",
    "ece",
    "fisher_exact",
    "kss_operator_gradient",
    "profile",
    "subsample_indices",
]
__version__ = "0.1.0"
