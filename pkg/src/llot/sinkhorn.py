"""Entropy-regularized optimal transport by log-domain Sinkhorn iterations.

Solves ``min <P, G> + lambda1 * sum P log P`` over couplings with the given
marginals. The iteration runs on the dual potentials ``f, g`` with
``P = exp((f_i + g_j - G_ij) / lambda1)`` so that small ``lambda1`` never
underflows the Gibbs kernel.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import MARGINAL_TOL, Coupling
from .errors import DataError, MarginalMismatch, NonFiniteCost, NotConverged

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITER = 1000


@dataclass(frozen=True)
class SinkhornResult:
    coupling: Coupling
    iterations_used: int
    final_marginal_residual: float
    objective: float
    converged: bool
    row_potential: np.ndarray = field(repr=False)
    col_potential: np.ndarray = field(repr=False)
    residual_trace: tuple = field(default=(), repr=False)


def _lse_rows(scaled_cost, pot, buf):
    # log sum_j exp(pot_j - scaled_cost_ij), row-wise
    np.subtract(pot[None, :], scaled_cost, out=buf)
    mx = buf.max(axis=1)
    buf -= mx[:, None]
    np.exp(buf, out=buf)
    return np.log(buf.sum(axis=1)) + mx


def _lse_cols(scaled_cost, pot, buf):
    np.subtract(pot[:, None], scaled_cost, out=buf)
    mx = buf.max(axis=0)
    buf -= mx[None, :]
    np.exp(buf, out=buf)
    return np.log(buf.sum(axis=0)) + mx


def entropic_objective(weights, cost, lambda1) -> float:
    p = np.asarray(weights, dtype=float)
    pos = p > 0
    return float(np.sum(p * cost) + lambda1 * np.sum(p[pos] * np.log(p[pos])))


def sinkhorn(
    cost,
    lambda1: float,
    row_marginal=None,
    col_marginal=None,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iter: int = DEFAULT_MAX_ITER,
    init_potentials: Optional[tuple] = None,
    record_trace: bool = False,
) -> SinkhornResult:
    """Solve the entropic OT problem for cost matrix ``cost``.

    Iterates until the row-marginal error (columns are exact after each
    sweep) drops to ``tolerance`` or ``max_iter`` sweeps are spent; the
    latter returns ``converged=False`` with a ``NotConverged`` warning.
    ``init_potentials`` warm-starts from a previous solve's ``(f, g)``;
    the fixed point does not depend on it. With ``record_trace`` the
    l1 row-marginal error before each sweep is kept; that sequence is
    non-increasing, whereas the max-abs error used for stopping need not be.
    """
    g_cost = np.asarray(cost, dtype=np.float64)
    if g_cost.ndim != 2:
        raise DataError("cost must be a matrix")
    if not np.all(np.isfinite(g_cost)):
        raise NonFiniteCost("cost matrix has non-finite entries")
    if not lambda1 > 0:
        raise ValueError("lambda1 must be positive")
    m, n = g_cost.shape
    a = np.full(m, 1.0 / m) if row_marginal is None else np.asarray(row_marginal, dtype=float)
    b = np.full(n, 1.0 / n) if col_marginal is None else np.asarray(col_marginal, dtype=float)
    if a.shape != (m,) or b.shape != (n,):
        raise DataError("marginal lengths do not match the cost shape")
    if np.any(a <= 0) or np.any(b <= 0):
        raise DataError("marginals must be strictly positive")
    if abs(a.sum() - b.sum()) > 1e-9:
        raise MarginalMismatch(f"row mass {a.sum():.12g} != column mass {b.sum():.12g}")

    scaled = g_cost / lambda1
    log_a, log_b = np.log(a), np.log(b)
    buf = np.empty_like(scaled)
    # potentials are kept divided by lambda1 throughout
    if init_potentials is None:
        f = np.zeros(m)
        g = log_b - _lse_cols(scaled, f, buf)
    else:
        f = np.asarray(init_potentials[0], dtype=float) / lambda1
        g = log_b - _lse_cols(scaled, f, buf)

    trace = []
    converged = False
    it = 0
    residual = np.inf
    while True:
        lse = _lse_rows(scaled, g, buf)
        row_sums = np.exp(f + lse)
        residual = float(np.abs(row_sums - a).max())
        if record_trace:
            trace.append(float(np.abs(row_sums - a).sum()))
        if residual <= tolerance:
            converged = True
            break
        if it >= max_iter:
            break
        f = log_a - lse
        g = log_b - _lse_cols(scaled, f, buf)
        it += 1

    np.add(f[:, None], g[None, :], out=buf)
    buf -= scaled
    np.exp(buf, out=buf)
    weights = buf
    col_res = float(np.abs(weights.sum(axis=0) - b).max())
    residual = max(residual, col_res)
    if not converged:
        warnings.warn(
            f"Sinkhorn stopped after {it} sweeps with marginal residual {residual:.3g}",
            NotConverged,
            stacklevel=2,
        )
    coupling = Coupling(weights, a, b, tol=max(MARGINAL_TOL, residual * (1 + 1e-9)))
    return SinkhornResult(
        coupling=coupling,
        iterations_used=it,
        final_marginal_residual=residual,
        objective=entropic_objective(weights, g_cost, lambda1),
        converged=converged,
        row_potential=f * lambda1,
        col_potential=g * lambda1,
        residual_trace=tuple(trace),
    )

