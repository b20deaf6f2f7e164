"""Laplacian-regularized linear optimal transport fit.

The outer loop is a generalized conditional gradient on the coupling: the
Laplacian term is linearized into the cost, an entropic OT problem is
solved for the resulting gradient, and the coupling takes a convex step
toward that solution. After each step the per-gene platform map is
re-estimated by regressing single-cell expression on spatial expression
over coupled pairs and moved by the same step size.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import (
    Coupling,
    PlatformMap,
    SharedGeneIndex,
    SingleCellDataset,
    SolverConfig,
    SpatialDataset,
    SpatialGraph,
    validate_pair,
)
from .errors import (
    DataError,
    DegenerateGene,
    GammaOutOfRange,
    MemoryBudgetExceeded,
    NotConverged,
    SlowConvergence,
)
from .graph import build_graph, laplacian_quadratic
from .sampling import sample_categorical
from .sinkhorn import sinkhorn

log = logging.getLogger(__name__)

SCALE_FLOOR = 1e-8
LAMBDA_FLOOR = 1e-8
DEGENERATE_VAR = 1e-12
AUTO_WEIGHTED_LIMIT = 5_000_000
AUTO_BATCH = 10_000
STEP_SCALE = {"weighted": 0.5, "stochastic": 0.05}
MEMORY_ENV = "LLOT_MEMORY_BUDGET_GB"
SINKHORN_BLOCKS = 10


@dataclass(frozen=True)
class FitState:
    coupling: Coupling
    platform_map: PlatformMap
    iteration: int
    objective_trace: tuple
    config_fingerprint: str


@dataclass(frozen=True)
class FitModel:
    state: FitState
    shared_gene_index: SharedGeneIndex
    spatial_graph: SpatialGraph
    spot_ids: tuple
    cell_ids: tuple
    spot_coordinates: np.ndarray = field(repr=False, default=None)
    provenance: dict = field(default_factory=dict)

    @property
    def coupling(self) -> np.ndarray:
        return self.state.coupling.weights

    @property
    def platform_map(self) -> PlatformMap:
        return self.state.platform_map


def init_platform_map(x_shared, y_shared) -> PlatformMap:
    """Moment-matched start: ``a = sd(Y) / sd(X)``, ``b = mean(Y) - mean(X)``.

    A gene that is constant across spots gets ``a = 1`` with a warning.
    """
    x = np.asarray(x_shared, dtype=float)
    y = np.asarray(y_shared, dtype=float)
    if x.shape[1] != y.shape[1]:
        raise DataError("spatial and single-cell shared matrices differ in gene count")
    sx = x.std(axis=0, ddof=1)
    sy = y.std(axis=0, ddof=1)
    flat = sx <= 0
    if flat.any():
        warnings.warn(
            f"{int(flat.sum())} shared gene(s) constant across spots; scale set to 1",
            DegenerateGene,
            stacklevel=2,
        )
    scale = np.where(flat, 1.0, sy / np.where(flat, 1.0, sx))
    scale = np.maximum(scale, SCALE_FLOOR)
    return PlatformMap(scale, y.mean(axis=0) - x.mean(axis=0))


def init_coupling(m: int, n: int) -> Coupling:
    if m < 1 or n < 1:
        raise ValueError("coupling dimensions must be positive")
    return Coupling.uniform(m, n)


def cost_matrix(platform_map: PlatformMap, x_shared, y_shared) -> np.ndarray:
    """Squared distances between mapped spots and cells, via one matrix product."""
    z = platform_map.apply(np.asarray(x_shared, dtype=float))
    y = np.asarray(y_shared, dtype=float)
    if z.shape[1] != y.shape[1]:
        raise DataError("platform map, spatial and single-cell gene counts disagree")
    c = np.einsum("ik,ik->i", z, z)[:, None] + np.einsum("jk,jk->j", y, y)[None, :]
    c -= 2.0 * (z @ y.T)
    np.maximum(c, 0.0, out=c)
    return c


def gcg_gradient(cost, coupling, lap, lambda2: float) -> np.ndarray:
    """``C + 2 * lambda2 * L P``: gradient of the smooth part of the objective."""
    p = np.asarray(getattr(coupling, "weights", coupling), dtype=float)
    if lambda2 == 0:
        return np.array(cost, dtype=float)
    return cost + (2.0 * lambda2) * np.asarray(lap @ p)


def gcg_update(old: Coupling, sub: Coupling, gamma: float) -> Coupling:
    if not 0.0 <= gamma <= 1.0:
        raise GammaOutOfRange(f"step {gamma} outside [0, 1]")
    if old.shape != sub.shape:
        raise DataError("couplings differ in shape")
    if gamma == 0.0:
        return old
    w = gamma * sub.weights + (1.0 - gamma) * old.weights
    tol = max(old.tol, sub.tol)
    return Coupling(w, old.row_marginal, old.col_marginal, tol=tol)


def step_size(t: int, mode: str, scale: Optional[float] = None) -> float:
    """Step ``gamma_t = s / (t + 1)`` with ``s`` 0.5 (weighted) or 0.05 (stochastic)."""
    s = STEP_SCALE[mode] if scale is None else scale
    return s / (t + 1)


def _fallback(alpha, beta, degenerate, mx, my, current_scale):
    if degenerate.any():
        cur = np.ones_like(alpha) if current_scale is None else np.asarray(current_scale, dtype=float)
        alpha[degenerate] = cur[degenerate]
        beta[degenerate] = my[degenerate] - alpha[degenerate] * mx[degenerate]
        warnings.warn(
            f"{int(degenerate.sum())} gene(s) with no spread under the coupling; "
            "keeping their current scale",
            DegenerateGene,
            stacklevel=3,
        )
    return alpha, beta


def weighted_regression(x_shared, y_shared, coupling, current_scale=None):
    """Per-gene weighted least squares of ``y_jk`` on ``x_ik`` over all pairs.

    The pair weights are the coupling entries; the cross moment is
    ``x_k^T P y_k``, so no pair list is ever built.
    """
    x = np.asarray(x_shared, dtype=float)
    y = np.asarray(y_shared, dtype=float)
    p = np.asarray(getattr(coupling, "weights", coupling), dtype=float)
    total = p.sum()
    r = p.sum(axis=1) / total
    c = p.sum(axis=0) / total
    mx = r @ x
    my = c @ y
    xc = x - mx
    yc = y - my
    var_x = r @ (xc * xc)
    cov = np.einsum("ik,ik->k", xc, p @ yc) / total
    degenerate = var_x < DEGENERATE_VAR
    alpha = cov / np.where(degenerate, 1.0, var_x)
    beta = my - alpha * mx
    return _fallback(alpha, beta, degenerate, mx, my, current_scale)


def stochastic_regression(x_shared, y_shared, coupling, batch_size: int, rng, current_scale=None):
    """Per-gene simple regression on ``batch_size`` pairs drawn from the coupling."""
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    x = np.asarray(x_shared, dtype=float)
    y = np.asarray(y_shared, dtype=float)
    p = np.asarray(getattr(coupling, "weights", coupling), dtype=float)
    n = p.shape[1]
    flat = sample_categorical(p, rng, batch_size)
    xs = x[flat // n]
    ys = y[flat % n]
    mx = xs.mean(axis=0)
    my = ys.mean(axis=0)
    xc = xs - mx
    var_x = np.einsum("bk,bk->k", xc, xc) / batch_size
    cov = np.einsum("bk,bk->k", xc, ys - my) / batch_size
    degenerate = var_x < DEGENERATE_VAR
    alpha = cov / np.where(degenerate, 1.0, var_x)
    beta = my - alpha * mx
    return _fallback(alpha, beta, degenerate, mx, my, current_scale)


def llot_objective(state, cost, lap, lambda1: float, lambda2: float) -> float:
    """Transport cost + entropy + Laplacian smoothness, with ``0 log 0 = 0``."""
    coupling = state.coupling if isinstance(state, FitState) else state
    p = np.asarray(getattr(coupling, "weights", coupling), dtype=float)
    pos = p > 0
    value = float(np.sum(p * cost)) + lambda1 * float(np.sum(p[pos] * np.log(p[pos])))
    if lambda2:
        value += lambda2 * laplacian_quadratic(p, lap)
    return value


def lambda_range(initial_cost) -> tuple[float, float]:
    mean = float(np.mean(initial_cost))
    return 0.02 * mean, 0.1 * mean


def default_lambdas(initial_cost) -> tuple[float, float]:
    """Geometric midpoint of the recommended bracket, ``sqrt(0.002) * mean(C0)``."""
    lo, hi = lambda_range(initial_cost)
    value = max(float(np.sqrt(lo * hi)), LAMBDA_FLOOR)
    return value, value


def resolve_mode(config: SolverConfig, m: int, n: int) -> tuple[str, int]:
    if config.regression_mode == "auto":
        if m * n <= AUTO_WEIGHTED_LIMIT:
            return "weighted", config.batch_size
        return "stochastic", AUTO_BATCH
    return config.regression_mode, config.batch_size


def memory_budget_gb(config: SolverConfig) -> float:
    env = os.environ.get(MEMORY_ENV)
    if env:
        try:
            return float(env)
        except ValueError:
            raise DataError(f"{MEMORY_ENV}={env!r} is not a number") from None
    return config.memory_budget_gb


def check_memory(m: int, n: int, budget_gb: float) -> None:
    need = 8.0 * m * n / 2**30
    if need > budget_gb:
        raise MemoryBudgetExceeded(
            f"a {m} x {n} coupling needs {need:.2f} GiB, over the {budget_gb:g} GiB budget "
            f"(raise it with {MEMORY_ENV})"
        )


def config_fingerprint(config: SolverConfig, shape: tuple) -> str:
    payload = json.dumps({"config": config.as_dict(), "shape": list(shape)}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _solve_subproblem(grad, lambda1, coupling, config, potentials):
    """Sinkhorn on the linearized problem, resumed in warm-started blocks.

    A block that stops at ``sinkhorn_max_iterations`` short of the tolerance
    is continued from its potentials, up to ``SINKHORN_BLOCKS`` blocks, so an
    unconverged subproblem cannot leak marginal error into every later iterate.
    """
    sweeps = 0
    for block in range(SINKHORN_BLOCKS):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NotConverged)
            inner = sinkhorn(
                grad,
                lambda1,
                coupling.row_marginal,
                coupling.col_marginal,
                tolerance=config.sinkhorn_tolerance,
                max_iter=config.sinkhorn_max_iterations,
                init_potentials=potentials,
            )
        sweeps += inner.iterations_used
        if inner.converged:
            return inner, sweeps
        potentials = (inner.row_potential, inner.col_potential)
    warnings.warn(
        f"Sinkhorn stopped after {sweeps} sweeps at residual {inner.final_marginal_residual:.3g}",
        NotConverged,
        stacklevel=3,
    )
    return inner, sweeps


def fit(
    spatial: SpatialDataset,
    cells: SingleCellDataset,
    config: SolverConfig = SolverConfig(),
    *,
    shared: Optional[SharedGeneIndex] = None,
    graph: Optional[SpatialGraph] = None,
    initial_map: Optional[PlatformMap] = None,
    provenance: Optional[dict] = None,
    callback: Optional[Callable[[FitState], None]] = None,
) -> FitModel:
    """Estimate the coupling and platform map.

    ``config.outer_iterations`` full outer steps are taken; with zero steps
    the initialization itself is returned. ``callback`` sees every
    intermediate state, starting with the initial one.
    """
    shared = validate_pair(spatial, cells) if shared is None else shared
    x = shared.spatial_matrix(spatial)
    y = shared.cell_matrix(cells)
    m, n = x.shape[0], y.shape[0]
    check_memory(m, n, memory_budget_gb(config))
    if graph is None:
        graph = build_graph(spatial.coordinates, config.knn_k)
    lap = graph.laplacian

    pmap = init_platform_map(x, y) if initial_map is None else initial_map
    coupling = init_coupling(m, n)
    cost = cost_matrix(pmap, x, y)
    auto1, auto2 = default_lambdas(cost)
    lambda1 = auto1 if config.lambda1 is None else config.lambda1
    lambda2 = auto2 if config.lambda2 is None else config.lambda2
    mode, batch = resolve_mode(config, m, n)
    rng = np.random.default_rng(config.rng_seed)
    fingerprint = config_fingerprint(config, (m, n, shared.count))

    trace = [llot_objective(coupling, cost, lap, lambda1, lambda2)]
    state = FitState(coupling, pmap, 0, tuple(trace), fingerprint)
    if callback is not None:
        callback(state)

    started = time.perf_counter()
    potentials = None
    sinkhorn_sweeps = []
    for t in range(config.outer_iterations):
        gamma = step_size(t, mode, config.step_scale)
        grad = gcg_gradient(cost, coupling, lap, lambda2)
        inner, sweeps = _solve_subproblem(grad, lambda1, coupling, config, potentials)
        potentials = (inner.row_potential, inner.col_potential)
        sinkhorn_sweeps.append(sweeps)
        coupling = gcg_update(coupling, inner.coupling, gamma)

        if config.learn_map:
            if mode == "weighted":
                alpha, beta = weighted_regression(x, y, coupling, pmap.scale)
            else:
                alpha, beta = stochastic_regression(x, y, coupling, batch, rng, pmap.scale)
            scale = gamma * alpha + (1.0 - gamma) * pmap.scale
            offset = gamma * beta + (1.0 - gamma) * pmap.offset
            pmap = PlatformMap(np.maximum(scale, SCALE_FLOOR), offset)
            cost = cost_matrix(pmap, x, y)

        trace.append(llot_objective(coupling, cost, lap, lambda1, lambda2))
        state = FitState(coupling, pmap, t + 1, tuple(trace), fingerprint)
        log.debug("iteration %d: gamma=%.4g objective=%.6g sweeps=%d",
                  t + 1, gamma, trace[-1], inner.iterations_used)
        if callback is not None:
            callback(state)

    if len(trace) >= 3 and trace[-3] <= trace[-2] <= trace[-1]:
        warnings.warn(
            "objective did not decrease over the last iterations", SlowConvergence, stacklevel=2
        )

    info = dict(provenance or {})
    info.update(
        config=config.as_dict(),
        lambda1=lambda1,
        lambda2=lambda2,
        regression_mode=mode,
        batch_size=batch,
        shape={"m": m, "n": n, "d": shared.count},
        sinkhorn_sweeps=sinkhorn_sweeps,
        fit_seconds=time.perf_counter() - started,
    )
    return FitModel(
        state=state,
        shared_gene_index=shared,
        spatial_graph=graph,
        spot_ids=spatial.spot_ids,
        cell_ids=cells.cell_ids,
        spot_coordinates=spatial.coordinates,
        provenance=info,
    )
