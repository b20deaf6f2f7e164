"""Independent reference computations used only by the tests.

Each one takes the slow, obvious route (explicit loops, pair lists,
dense kernels) so that it shares no code path with the package.
"""

import itertools
import math

import numpy as np


def dense_scaling_ot(cost, lam, a=None, b=None, tol=1e-13, max_iter=200_000):
    """Kernel-scaling iterations u = a / K v, v = b / K^T u."""
    c = np.asarray(cost, dtype=float)
    m, n = c.shape
    a = np.full(m, 1.0 / m) if a is None else np.asarray(a, float)
    b = np.full(n, 1.0 / n) if b is None else np.asarray(b, float)
    k = np.exp(-c / lam)
    u, v = np.ones(m), np.ones(n)
    for _ in range(max_iter):
        u = a / (k @ v)
        v = b / (k.T @ u)
        p = u[:, None] * k * v[None, :]
        if np.abs(p.sum(axis=1) - a).max() < tol:
            break
    return u[:, None] * k * v[None, :]


def brute_knn_edges(coords, k):
    """Undirected edge set from an all-pairs scan with (distance, index) ordering."""
    pts = [tuple(map(float, p)) for p in np.atleast_2d(coords)]
    m = len(pts)
    edges = set()
    for i in range(m):
        others = sorted(
            (sum((pts[i][t] - pts[j][t]) ** 2 for t in range(len(pts[i]))), j)
            for j in range(m) if j != i
        )
        for _, j in others[:k]:
            edges.add((min(i, j), max(i, j)))
    return edges


def edge_sum_quadratic(p, edges):
    """Half the ordered-pair sum of squared row differences = undirected edge sum."""
    total = 0.0
    for i, j in edges:
        for kk in range(p.shape[1]):
            total += (p[i, kk] - p[j, kk]) ** 2
    return total


def naive_cost(scale, offset, x, y):
    m, d = x.shape
    n = y.shape[0]
    c = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            c[i, j] = sum((scale[k] * x[i, k] + offset[k] - y[j, k]) ** 2 for k in range(d))
    return c


def pairs_wls(x, y, p):
    """Per-gene weighted least squares over an explicit list of all (i, j) pairs."""
    m, d = x.shape
    n = y.shape[0]
    alphas, betas = [], []
    for k in range(d):
        rows, targets, weights = [], [], []
        for i, j in itertools.product(range(m), range(n)):
            rows.append([x[i, k], 1.0])
            targets.append(y[j, k])
            weights.append(p[i, j])
        a = np.array(rows)
        w = np.array(weights)
        t = np.array(targets)
        coef = np.linalg.solve(a.T @ (w[:, None] * a), a.T @ (w * t))
        alphas.append(coef[0])
        betas.append(coef[1])
    return np.array(alphas), np.array(betas)


def naive_objective(p, cost, lap_dense, lam1, lam2):
    m, n = p.shape
    total = 0.0
    for i in range(m):
        for j in range(n):
            total += p[i, j] * cost[i, j]
            if p[i, j] > 0:
                total += lam1 * p[i, j] * math.log(p[i, j])
    quad = 0.0
    for k in range(n):
        for i in range(m):
            for j in range(m):
                quad += p[i, k] * lap_dense[i, j] * p[j, k]
    return total + lam2 * quad


def central_difference(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def pearson(u, v):
    n = len(u)
    mu, mv = sum(u) / n, sum(v) / n
    num = sum((a - mu) * (b - mv) for a, b in zip(u, v))
    den = math.sqrt(sum((a - mu) ** 2 for a in u) * sum((b - mv) ** 2 for b in v))
    return num / den


def random_graph(rng, m, p=0.3):
    d = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            if rng.random() < p:
                d[i, j] = d[j, i] = 1.0
    return d


def random_coupling(rng, m, n):
    """A feasible coupling with uniform marginals (Sinkhorn-free: via scaling oracle)."""
    return dense_scaling_ot(rng.random((m, n)), 0.5)
