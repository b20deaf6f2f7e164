"""Laplacian linear optimal transport for mapping single cells onto spatial spots."""

__version__ = "0.1.0"

from .data import (  # noqa: E402
    Coupling,
    PlatformMap,
    SharedGeneIndex,
    SingleCellDataset,
    SolverConfig,
    SpatialDataset,
    SpatialGraph,
    validate_pair,
)
from .solver import FitModel, FitState, fit  # noqa: E402
from .tasks import deconvolve, infer_location, predict_gene  # noqa: E402

__all__ = [
    "Coupling",
    "FitModel",
    "FitState",
    "PlatformMap",
    "SharedGeneIndex",
    "SingleCellDataset",
    "SolverConfig",
    "SpatialDataset",
    "SpatialGraph",
    "deconvolve",
    "fit",
    "infer_location",
    "predict_gene",
    "validate_pair",
]
