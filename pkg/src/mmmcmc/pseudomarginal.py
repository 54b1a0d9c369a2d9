"""Normalized histograms over configuration space and the importance-sampling estimator.

The tensorized histogram treats each Cartesian dimension independently: bins of
uniform width ``h`` anchored at the origin (bin l covers [l*h, (l+1)*h)), one
sparse count table per dimension, and the product of the per-dimension
densities as the joint density. Dividing each one-dimensional factor by ``h``
makes every factor integrate to one, so the product is a proper importance
density. Sampling is inverse-CDF per dimension followed by a uniform draw
within the chosen bin.

All estimator arithmetic is done in natural-log space with a max shift; the
target density drops its unknown global normalization, which cancels in every
acceptance ratio.
"""

from __future__ import annotations

import math

import numpy as np

NEG_INF = float("-inf")


class EstimatorDegenerateError(RuntimeError):
    """Every importance weight vanished; the caller should reject the move."""


class TensorHistogram:
    """Product of per-dimension one-dimensional histograms, normalized as a density.

    Construction sorts every coordinate column once (O(K log K) per dimension);
    the sorted integer bin labels double as the inverse CDF, since picking a
    uniformly random entry of a sorted column selects each bin with probability
    count/K.
    """

    def __init__(self, sorted_bins: np.ndarray, bin_width: float):
        self._bins = sorted_bins  # (K, d) int64, each column sorted ascending
        self.bin_width = float(bin_width)
        self.total_count = sorted_bins.shape[0]
        self.n_dim = sorted_bins.shape[1]

    @classmethod
    def from_samples(cls, samples, bin_width: float) -> "TensorHistogram":
        samples = np.asarray(samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.size == 0:
            raise ValueError("cannot build a histogram from an empty sample list")
        if bin_width <= 0:
            raise ValueError("bin width must be positive")
        if not np.all(np.isfinite(samples)):
            raise ValueError("histogram samples must be finite")
        idx = np.floor(samples / bin_width).astype(np.int64)
        idx.sort(axis=0)
        return cls(idx, bin_width)

    def bin_counts(self, dim: int) -> dict[int, int]:
        """Sparse count table of one dimension (bin label -> count)."""
        labels, counts = np.unique(self._bins[:, dim], return_counts=True)
        return dict(zip(labels.tolist(), counts.tolist()))

    def _counts_at(self, labels: np.ndarray) -> np.ndarray:
        """Occupancy of the query bin labels, shape (B, d) for labels (B, d)."""
        b = labels.shape[0]
        if b * self.total_count * self.n_dim <= 4_000_000:
            return (self._bins[None, :, :] == labels[:, None, :]).sum(axis=1)
        out = np.empty(labels.shape, dtype=np.int64)
        step = max(1, 4_000_000 // (self.total_count * self.n_dim))
        for lo in range(0, b, step):
            hi = min(b, lo + step)
            out[lo:hi] = (self._bins[None, :, :] == labels[lo:hi, None, :]).sum(axis=1)
        return out

    def log_density(self, x) -> float:
        """Log of the product density at one point; -inf if any dimension misses."""
        return float(self.log_density_batch(np.asarray(x, dtype=float)[None, :])[0])

    def log_density_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        labels = np.floor(x / self.bin_width).astype(np.int64)
        counts = self._counts_at(labels)
        norm = self.total_count * self.bin_width
        with np.errstate(divide="ignore"):
            logs = np.where(counts > 0, np.log(counts / norm), NEG_INF)
        return logs.sum(axis=1)

    def sample_n(self, n: int, rng) -> np.ndarray:
        """Draw n independent points; dimensions are sampled independently."""
        u = rng.random((self.n_dim, 2, n))
        out = np.empty((n, self.n_dim))
        for i in range(self.n_dim):
            pick = np.minimum((u[i, 0] * self.total_count).astype(np.int64), self.total_count - 1)
            labels = self._bins[pick, i]
            out[:, i] = (labels + u[i, 1]) * self.bin_width
        return out

    def sample(self, rng) -> np.ndarray:
        """Draw one point; it always has finite log_density."""
        return self.sample_n(1, rng)[0]


class FullHistogram:
    """Joint-bin histogram over the full configuration space (reference path).

    Bins are the same origin-anchored boxes as TensorHistogram but counted
    jointly, by the quadratic scan over particles: each particle not yet
    assigned opens a bin, then all remaining particles are compared against it.
    Only useful at small sample counts; it serves as an independent check of
    the tensorized path on low-dimensional problems, where the two coincide in
    one dimension by construction.
    """

    def __init__(self, bins: np.ndarray, counts: np.ndarray, bin_width: float, total: int):
        self.bins = bins  # (J, d) int64, lexicographically sorted
        self.counts = counts  # (J,)
        self.bin_width = float(bin_width)
        self.total_count = int(total)
        self.n_dim = bins.shape[1]
        self._cum = np.cumsum(counts)

    @classmethod
    def from_samples(cls, samples, bin_width: float) -> "FullHistogram":
        samples = np.asarray(samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.size == 0:
            raise ValueError("cannot build a histogram from an empty sample list")
        if not np.all(np.isfinite(samples)):
            raise ValueError("histogram samples must be finite")
        k = samples.shape[0]
        idx = np.floor(samples / bin_width).astype(np.int64)
        assigned = np.zeros(k, dtype=bool)
        bins = []
        counts = []
        for a in range(k):
            if assigned[a]:
                continue
            members = np.all(idx == idx[a], axis=1)
            assigned |= members
            bins.append(idx[a])
            counts.append(int(members.sum()))
        bins = np.array(bins, dtype=np.int64)
        counts = np.array(counts, dtype=np.int64)
        order = np.lexsort(bins.T[::-1])  # sort bins so sampling order is canonical
        return cls(bins[order], counts[order], bin_width, k)

    def log_density(self, x) -> float:
        return float(self.log_density_batch(np.asarray(x, dtype=float)[None, :])[0])

    def log_density_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        labels = np.floor(x / self.bin_width).astype(np.int64)
        hits = np.all(labels[:, None, :] == self.bins[None, :, :], axis=2)
        counts = hits @ self.counts
        norm = self.total_count * self.bin_width**self.n_dim
        with np.errstate(divide="ignore"):
            return np.where(counts > 0, np.log(counts / norm), NEG_INF)

    def sample_n(self, n: int, rng) -> np.ndarray:
        u_bin = rng.random(n)
        u_pos = rng.random((n, self.n_dim))
        j = np.searchsorted(self._cum, u_bin * self.total_count, side="right")
        j = np.minimum(j, len(self.counts) - 1)
        return (self.bins[j] + u_pos) * self.bin_width

    def sample(self, rng) -> np.ndarray:
        return self.sample_n(1, rng)[0]


def log_target_density(z, x, system, lam, beta):
    """Unnormalized log joint density of (z, x) used by the estimator.

    0.5*log(lam*beta/2pi) - beta*lam*diff(rc(x), z)^2/2 - beta*V(x), with the
    system's reaction-coordinate difference (wrapped for angular coordinates).
    The configuration-space normalization is deliberately dropped: only
    differences of estimates are ever consumed.
    """
    x = np.asarray(x, dtype=float)
    batch = x.ndim == 2
    d = system.rc_diff(system.rc(x), z)
    val = (
        0.5 * math.log(lam * beta / (2.0 * math.pi))
        - 0.5 * beta * lam * np.square(d)
        - beta * system.potential(x)
    )
    if not batch:
        return float(val)
    return val


def _log_mean_weights(log_w: np.ndarray) -> float:
    """Max-shifted log of the mean of exp(log_w); immune to overflow."""
    m = float(np.max(log_w))
    if m == NEG_INF:
        raise EstimatorDegenerateError("all importance weights are zero")
    return m + math.log(float(np.mean(np.exp(log_w - m))))


def estimate_log_mu_lambda(z, hist, k_eval: int, system, lam, beta, rng) -> float:
    """Importance-sampling estimate of the log marginal density at z.

    Draws k_eval i.i.d. points from the histogram and averages the ratio of the
    unnormalized joint density to the histogram density, in log space.
    """
    if k_eval < 1:
        raise ValueError("k_eval must be at least 1")
    y = hist.sample_n(k_eval, rng)
    log_w = log_target_density(z, y, system, lam, beta) - hist.log_density_batch(y)
    return _log_mean_weights(log_w)


def estimate_log_mu_lambda_reuse(z, samples, hist, system, lam, beta) -> float:
    """Estimate reusing the construction samples as evaluation points.

    Deterministic given its inputs and cheaper than fresh draws, but the
    evaluation points are no longer independent of the histogram, so the
    result is not exact in expectation.
    """
    y = np.asarray(samples, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    log_w = log_target_density(z, y, system, lam, beta) - hist.log_density_batch(y)
    return _log_mean_weights(log_w)


def default_bin_width(lam: float) -> float:
    """Histogram bin width coupled to the spring strength."""
    return math.sqrt(1.0 / (2.0 * lam))
