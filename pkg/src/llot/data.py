"""Shared domain types.

Every type here is immutable after construction: arrays are copied to
float64 and flagged read-only, so values can be handed to concurrent
workers without defensive copies.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .errors import DataError, DuplicateGene, DuplicateId, EmptyIntersection

MARGINAL_TOL = 1e-6
REGRESSION_MODES = ("weighted", "stochastic", "auto")


def _frozen(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise DataError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _unique_ids(ids: Sequence[str], what: str) -> tuple[str, ...]:
    ids = tuple(str(i) for i in ids)
    if len(set(ids)) != len(ids):
        seen, dup = set(), None
        for i in ids:
            if i in seen:
                dup = i
                break
            seen.add(i)
        raise DuplicateId(f"duplicate {what} id {dup!r}")
    return ids


def normalize_gene(name: str) -> str:
    return str(name).strip().upper()


def _check_gene_names(gene_ids: Sequence[str], what: str) -> None:
    seen: dict[str, str] = {}
    for g in gene_ids:
        key = normalize_gene(g)
        if key in seen:
            raise DuplicateGene(
                f"{what}: genes {seen[key]!r} and {g!r} both normalize to {key!r}"
            )
        seen[key] = g


@dataclass(frozen=True)
class SpatialDataset:
    """Spot-by-gene expression with 2-D spot coordinates."""

    expression: np.ndarray
    coordinates: np.ndarray
    gene_ids: tuple[str, ...]
    spot_ids: tuple[str, ...]

    def __post_init__(self):
        expr = _frozen(self.expression, 2, "spatial expression")
        coords = _frozen(self.coordinates, 2, "spot coordinates")
        genes = tuple(str(g) for g in self.gene_ids)
        spots = _unique_ids(self.spot_ids, "spot")
        m = expr.shape[0]
        if coords.shape != (m, 2):
            raise DataError(f"coordinates must be {m}x2, got {coords.shape}")
        if len(spots) != m:
            raise DataError(f"{len(spots)} spot ids for {m} expression rows")
        if len(genes) != expr.shape[1]:
            raise DataError(f"{len(genes)} gene ids for {expr.shape[1]} columns")
        if m < 2:
            raise DataError("a spatial dataset needs at least 2 spots")
        _check_gene_names(genes, "spatial dataset")
        object.__setattr__(self, "expression", expr)
        object.__setattr__(self, "coordinates", coords)
        object.__setattr__(self, "gene_ids", genes)
        object.__setattr__(self, "spot_ids", spots)

    @property
    def m(self) -> int:
        return self.expression.shape[0]

    @property
    def p(self) -> int:
        return self.expression.shape[1]

    def gene_column(self, gene: str) -> int:
        key = normalize_gene(gene)
        for k, g in enumerate(self.gene_ids):
            if normalize_gene(g) == key:
                return k
        raise KeyError(gene)

    def with_expression(self, expression, gene_ids=None) -> "SpatialDataset":
        return replace(
            self,
            expression=expression,
            gene_ids=self.gene_ids if gene_ids is None else tuple(gene_ids),
        )


@dataclass(frozen=True)
class SingleCellDataset:
    """Cell-by-gene expression with optional cell-type labels."""

    expression: np.ndarray
    gene_ids: tuple[str, ...]
    cell_ids: tuple[str, ...]
    cell_types: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        expr = _frozen(self.expression, 2, "single-cell expression")
        genes = tuple(str(g) for g in self.gene_ids)
        cells = _unique_ids(self.cell_ids, "cell")
        n = expr.shape[0]
        if len(cells) != n:
            raise DataError(f"{len(cells)} cell ids for {n} expression rows")
        if len(genes) != expr.shape[1]:
            raise DataError(f"{len(genes)} gene ids for {expr.shape[1]} columns")
        if n < 2:
            raise DataError("a single-cell dataset needs at least 2 cells")
        _check_gene_names(genes, "single-cell dataset")
        types = self.cell_types
        if types is not None:
            types = tuple(str(t) for t in types)
            if len(types) != n:
                raise DataError(f"{len(types)} cell-type labels for {n} cells")
        object.__setattr__(self, "expression", expr)
        object.__setattr__(self, "gene_ids", genes)
        object.__setattr__(self, "cell_ids", cells)
        object.__setattr__(self, "cell_types", types)

    @property
    def n(self) -> int:
        return self.expression.shape[0]

    @property
    def q(self) -> int:
        return self.expression.shape[1]

    @property
    def type_labels(self) -> tuple[str, ...]:
        """Sorted set of observed cell-type labels."""
        if self.cell_types is None:
            return ()
        return tuple(sorted(set(self.cell_types)))

    def gene_column(self, gene: str) -> int:
        key = normalize_gene(gene)
        for k, g in enumerate(self.gene_ids):
            if normalize_gene(g) == key:
                return k
        raise KeyError(gene)

    def with_expression(self, expression, gene_ids=None) -> "SingleCellDataset":
        return replace(
            self,
            expression=expression,
            gene_ids=self.gene_ids if gene_ids is None else tuple(gene_ids),
        )


@dataclass(frozen=True)
class SharedGeneIndex:
    gene_ids: tuple[str, ...]
    spatial_columns: tuple[int, ...]
    cell_columns: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.gene_ids) == len(self.spatial_columns) == len(self.cell_columns)):
            raise DataError("shared gene index columns are not parallel")
        if list(self.gene_ids) != sorted(self.gene_ids):
            raise DataError("shared gene ids must be sorted")

    @property
    def count(self) -> int:
        return len(self.gene_ids)

    def spatial_matrix(self, spatial: SpatialDataset) -> np.ndarray:
        return spatial.expression[:, list(self.spatial_columns)]

    def cell_matrix(self, cells: SingleCellDataset) -> np.ndarray:
        return cells.expression[:, list(self.cell_columns)]

    def without(self, genes: Sequence[str]) -> "SharedGeneIndex":
        drop = {normalize_gene(g) for g in genes}
        keep = [k for k, g in enumerate(self.gene_ids) if g not in drop]
        if not keep:
            raise EmptyIntersection("no shared genes left after withholding")
        return SharedGeneIndex(
            gene_ids=tuple(self.gene_ids[k] for k in keep),
            spatial_columns=tuple(self.spatial_columns[k] for k in keep),
            cell_columns=tuple(self.cell_columns[k] for k in keep),
        )


def validate_pair(spatial: SpatialDataset, cells: SingleCellDataset) -> SharedGeneIndex:
    """Match genes between the two datasets after trim+uppercase normalization.

    The result is sorted by normalized name, so permuting either dataset's
    columns leaves the shared gene order unchanged.
    """
    _check_gene_names(spatial.gene_ids, "spatial dataset")
    _check_gene_names(cells.gene_ids, "single-cell dataset")
    sp = {normalize_gene(g): k for k, g in enumerate(spatial.gene_ids)}
    sc = {normalize_gene(g): k for k, g in enumerate(cells.gene_ids)}
    shared = sorted(set(sp) & set(sc))
    if not shared:
        raise EmptyIntersection("the spatial and single-cell datasets share no gene names")
    return SharedGeneIndex(
        gene_ids=tuple(shared),
        spatial_columns=tuple(sp[g] for g in shared),
        cell_columns=tuple(sc[g] for g in shared),
    )


@dataclass(frozen=True)
class Coupling:
    """Nonnegative m x n transport plan with its target marginals."""

    weights: np.ndarray
    row_marginal: np.ndarray = None
    col_marginal: np.ndarray = None
    tol: float = field(default=MARGINAL_TOL, compare=False)

    def __post_init__(self):
        w = _frozen(self.weights, 2, "coupling")
        m, n = w.shape
        rows = np.full(m, 1.0 / m) if self.row_marginal is None else self.row_marginal
        cols = np.full(n, 1.0 / n) if self.col_marginal is None else self.col_marginal
        rows = _frozen(rows, 1, "row marginal")
        cols = _frozen(cols, 1, "column marginal")
        if rows.shape != (m,) or cols.shape != (n,):
            raise DataError("marginal lengths do not match the coupling shape")
        if np.any(w < 0):
            raise DataError("coupling has negative entries")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "row_marginal", rows)
        object.__setattr__(self, "col_marginal", cols)
        residual = self.marginal_residual()
        if residual > self.tol:
            raise DataError(f"coupling marginals violated by {residual:.3g} (tol {self.tol:g})")

    @classmethod
    def uniform(cls, m: int, n: int) -> "Coupling":
        return cls(np.full((m, n), 1.0 / (m * n)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape

    def marginal_residual(self) -> float:
        r = np.abs(self.weights.sum(axis=1) - self.row_marginal).max()
        c = np.abs(self.weights.sum(axis=0) - self.col_marginal).max()
        return float(max(r, c))


@dataclass(frozen=True)
class PlatformMap:
    """Per-gene affine calibration ``a * x + b`` from spatial to single-cell scale."""

    scale: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        a = _frozen(self.scale, 1, "platform scale")
        b = _frozen(self.offset, 1, "platform offset")
        if a.shape != b.shape:
            raise DataError("platform scale and offset differ in length")
        if np.any(a <= 0):
            raise DataError("platform scale entries must be positive")
        object.__setattr__(self, "scale", a)
        object.__setattr__(self, "offset", b)

    @property
    def d(self) -> int:
        return self.scale.shape[0]

    @classmethod
    def identity(cls, d: int) -> "PlatformMap":
        return cls(np.ones(d), np.zeros(d))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x * self.scale + self.offset


@dataclass(frozen=True)
class SpatialGraph:
    connectivity: sparse.csr_matrix
    laplacian: sparse.csr_matrix
    k: int

    @property
    def m(self) -> int:
        return self.connectivity.shape[0]

    def edges(self) -> np.ndarray:
        """Undirected edge list ``(i, j)`` with ``i < j``."""
        upper = sparse.triu(self.connectivity, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return np.column_stack([upper.row[order], upper.col[order]]).astype(np.int64)


@dataclass(frozen=True)
class SolverConfig:
    """Solver settings. ``None`` lambdas are filled in from the initial cost.

    ``lambda1`` weights the entropy term and ``lambda2`` the Laplacian term.
    ``step_scale`` overrides the numerator of the step schedule
    ``gamma_t = step_scale / (t + 1)`` (0.5 weighted, 0.05 stochastic).
    ``learn_map=False`` freezes the platform map at its initial value.
    """

    lambda1: Optional[float] = None
    lambda2: Optional[float] = None
    outer_iterations: int = 20
    knn_k: int = 6
    regression_mode: str = "auto"
    batch_size: int = 10_000
    sinkhorn_tolerance: float = 1e-8
    sinkhorn_max_iterations: int = 1000
    rng_seed: int = 0
    step_scale: Optional[float] = None
    learn_map: bool = True
    memory_budget_gb: float = 8.0

    def __post_init__(self):
        # plain Python scalars so the config always serializes
        for name in ("outer_iterations", "knn_k", "batch_size", "sinkhorn_max_iterations", "rng_seed"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise ValueError(f"{name} must be an integer")
            object.__setattr__(self, name, int(value))
        for name in ("lambda1", "lambda2", "step_scale"):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "sinkhorn_tolerance", float(self.sinkhorn_tolerance))
        object.__setattr__(self, "memory_budget_gb", float(self.memory_budget_gb))
        object.__setattr__(self, "learn_map", bool(self.learn_map))
        if self.lambda1 is not None and not self.lambda1 > 0:
            raise ValueError("lambda1 must be positive")
        if self.lambda2 is not None and not self.lambda2 >= 0:
            raise ValueError("lambda2 must be nonnegative")
        if self.outer_iterations < 0:
            raise ValueError("outer_iterations must be >= 0")
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")
        if self.regression_mode not in REGRESSION_MODES:
            raise ValueError(f"regression_mode must be one of {REGRESSION_MODES}")
        if self.regression_mode != "weighted" and self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 when stochastic regression can run")
        if not self.sinkhorn_tolerance > 0:
            raise ValueError("sinkhorn_tolerance must be positive")
        if self.sinkhorn_max_iterations < 1:
            raise ValueError("sinkhorn_max_iterations must be >= 1")
        if self.step_scale is not None and not 0 < self.step_scale <= 1:
            raise ValueError("step_scale must lie in (0, 1]")
        if not self.memory_budget_gb > 0:
            raise ValueError("memory_budget_gb must be positive")

    def replace(self, **changes) -> "SolverConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        from dataclasses import asdict

        return asdict(self)
