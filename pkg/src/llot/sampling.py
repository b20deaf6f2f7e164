"""Draws from a finite categorical distribution given by nonnegative weights."""

from __future__ import annotations

import numpy as np

ALIAS_THRESHOLD = 1_000_000


class AliasTable:
    """Walker alias table with a vectorized build.

    Each round hands every deficient bucket to a surplus bucket chosen by
    laying deficits and surpluses end to end and matching by where each
    deficit starts; a donor that overdraws becomes deficient in the next
    round. ``probabilities()`` reconstructs the exact input distribution.
    """

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float).ravel()
        if w.size == 0 or np.any(w < 0) or not np.isfinite(w).all() or w.sum() <= 0:
            raise ValueError("weights must be finite, nonnegative and not all zero")
        size = w.size
        q = w * (size / w.sum())
        prob = np.ones(size)
        alias = np.arange(size)
        small = np.flatnonzero(q < 1.0)
        large = np.flatnonzero(q >= 1.0)
        while small.size and large.size:
            deficit = 1.0 - q[small]
            start = np.cumsum(deficit) - deficit
            owner = np.searchsorted(np.cumsum(q[large] - 1.0), start, side="right")
            np.minimum(owner, large.size - 1, out=owner)
            prob[small] = q[small]
            alias[small] = large[owner]
            q[large] -= np.bincount(owner, weights=deficit, minlength=large.size)
            keep = q[large] >= 1.0
            small = large[~keep]
            large = large[keep]
        # leftovers carry mass 1 up to rounding
        self.prob = prob
        self.alias = alias
        self.size = size

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        bucket = rng.integers(self.size, size=count)
        coin = rng.random(count)
        return np.where(coin < self.prob[bucket], bucket, self.alias[bucket])

    def probabilities(self) -> np.ndarray:
        out = self.prob.copy()
        np.add.at(out, self.alias, 1.0 - self.prob)
        return out / self.size


def sample_inverse_cdf(weights, rng: np.random.Generator, count: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float).ravel()
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, rng.random(count), side="right")
    return np.minimum(idx, w.size - 1)


def sample_categorical(weights, rng: np.random.Generator, count: int) -> np.ndarray:
    """Flat indices drawn i.i.d. proportional to ``weights``.

    Uses the inverse CDF up to ``ALIAS_THRESHOLD`` categories and an alias
    table beyond it.
    """
    w = np.asarray(weights, dtype=float).ravel()
    if w.size > ALIAS_THRESHOLD:
        return AliasTable(w).sample(rng, count)
    return sample_inverse_cdf(w, rng, count)
