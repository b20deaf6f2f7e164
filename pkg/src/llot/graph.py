"""K-nearest-neighbour spot graph and its combinatorial Laplacian."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy import sparse

from .data import SpatialGraph
from .errors import DataError, KTooLarge

DEFAULT_K = 6
_BLOCK_ENTRIES = 2_000_000


def knn_connectivity(coordinates, k: int = DEFAULT_K) -> sparse.csr_matrix:
    """Symmetric 0/1 adjacency: ``j`` is linked to ``i`` when either is among
    the other's ``k`` nearest distinct spots.

    Ties at equal distance go to the lower spot index, so each spot keeps
    exactly ``k`` outgoing neighbours even on degenerate layouts.
    """
    s = np.asarray(coordinates, dtype=float)
    if s.ndim != 2 or s.shape[0] < 2:
        raise DataError("knn_connectivity needs an (m, dim) array with m >= 2")
    if not np.all(np.isfinite(s)):
        raise DataError("coordinates must be finite")
    m = s.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= m:
        raise KTooLarge(f"k={k} needs more than {m} spots")

    chunk = max(1, _BLOCK_ENTRIES // m)
    rows = np.repeat(np.arange(m), k)
    cols = np.empty(m * k, dtype=np.int64)
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        # exact differences (not the |u|^2+|v|^2-2uv expansion) so that
        # coincident points sit at distance exactly 0 and ties stay ties
        d2 = ((s[start:stop, None, :] - s[None, :, :]) ** 2).sum(axis=2)
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        cols[start * k:stop * k] = order.ravel()

    directed = sparse.csr_matrix((np.ones(m * k), (rows, cols)), shape=(m, m))
    sym = directed.maximum(directed.T).tocsr()
    sym.data[:] = 1.0
    sym.eliminate_zeros()
    return sym


def laplacian(connectivity) -> sparse.csr_matrix:
    """``diag(D 1) - D`` as a sparse matrix."""
    d = sparse.csr_matrix(connectivity, dtype=float)
    degree = np.asarray(d.sum(axis=1)).ravel()
    return (sparse.diags(degree) - d).tocsr()


def build_graph(coordinates, k: int = DEFAULT_K) -> SpatialGraph:
    d = knn_connectivity(coordinates, k)
    return SpatialGraph(connectivity=d, laplacian=laplacian(d), k=k)


def laplacian_quadratic(coupling, lap) -> float:
    """``tr(P^T L P)`` for a dense coupling ``P`` and sparse Laplacian ``L``.

    Equals half the sum over ordered adjacent pairs of squared row
    differences, i.e. the sum over undirected edges.
    """
    p = np.asarray(getattr(coupling, "weights", coupling), dtype=float)
    return float(np.einsum("ij,ij->", p, lap @ p))


def laplacian_quadratic_edges(coupling, connectivity) -> float:
    """Edge-sum form of :func:`laplacian_quadratic`, used as a cross-check."""
    p = np.asarray(getattr(coupling, "weights", coupling), dtype=float)
    upper = sparse.triu(sparse.csr_matrix(connectivity), k=1).tocoo()
    diff = p[upper.row] - p[upper.col]
    return float(np.sum(upper.data[:, None] * diff * diff))


def write_edges_csv(path, graph: SpatialGraph, spot_ids=None) -> None:
    edges = graph.edges()
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "target"])
        for i, j in edges:
            if spot_ids is None:
                w.writerow([int(i), int(j)])
            else:
                w.writerow([spot_ids[i], spot_ids[j]])


def read_edges_csv(path, m: int, spot_ids=None) -> sparse.csr_matrix:
    lookup = None if spot_ids is None else {s: k for k, s in enumerate(spot_ids)}
    rows, cols = [], []
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for rec in reader:
            if not rec:
                continue
            a, b = rec
            if lookup is None:
                i, j = int(a), int(b)
            else:
                i, j = lookup[a], lookup[b]
            rows += [i, j]
            cols += [j, i]
    return sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m))
