"""Ground-truth quadrature oracles and statistical post-processing.

Everything here is a pure function. The quadrature routines are the reference
answers that sampled histograms and estimator outputs are compared against, so
they are tuned for accuracy (relative tolerance 1e-8 or better), not speed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .model import wrap_angle

PI = math.pi


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


def _quad(f, a, b, points=None, epsrel=1e-10, epsabs=1e-14):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(
            f, a, b, points=points, epsabs=epsabs, epsrel=epsrel, limit=400
        )
    if not math.isfinite(val) or err > max(1e-8 * abs(val), 10.0 * epsabs):
        raise QuadratureError(f"integral did not converge (value {val}, error {err})")
    return val


def _wrapped_gaussian_images(beta, lam):
    """How many 2*pi images of the Gaussian factor are needed for 1e-18 accuracy."""
    spread = 1.0 / math.sqrt(beta * lam)
    return max(1, int(math.ceil(10.0 * spread / (2.0 * PI))) + 1)


def quadrature_mu_lambda(z, free_energy, lam, beta, periodic=True):
    """Marginal density of the reaction coordinate under the Gaussian coupling.

    Integrates sqrt(lam*beta/2pi) * exp(-beta*lam*d(u,z)^2/2) * exp(-beta*A(u))
    over the coordinate domain, up to the global constant that cancels in all
    ratios. For a periodic coordinate the domain is (-pi, pi] and the Gaussian
    factor is wrapped (summed over its 2*pi images); otherwise the integral
    runs over the whole real line with the plain difference.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    prefac = math.sqrt(lam * beta / (2.0 * PI))
    half_prec = 0.5 * beta * lam

    if not periodic:

        def integrand(v):
            return prefac * math.exp(-half_prec * v * v) * math.exp(-beta * free_energy(z + v))

        return _quad(integrand, -np.inf, np.inf)

    zw = wrap_angle(z)
    n_img = _wrapped_gaussian_images(beta, lam)
    shifts = 2.0 * PI * np.arange(-n_img, n_img + 1)

    def integrand(u):
        d = u - zw
        g = np.exp(-half_prec * (d + shifts) ** 2).sum()
        return prefac * g * math.exp(-beta * free_energy(u))

    # integrate over one period centered on the peak; split off the peak
    # segment when the Gaussian is much narrower than the domain
    sigma = 1.0 / math.sqrt(beta * lam)
    if 12.0 * sigma < PI:
        return (
            _quad(integrand, zw - 12.0 * sigma, zw + 12.0 * sigma, points=[zw])
            + _quad(integrand, zw - PI, zw - 12.0 * sigma)
            + _quad(integrand, zw + 12.0 * sigma, zw + PI)
        )
    return _quad(integrand, zw - PI, zw + PI, points=[zw])


def quadrature_expectation(f, free_energy, beta, periodic=True):
    """Expectation of f(z) under the Boltzmann weight of the free energy."""
    lo, hi = (-PI, PI) if periodic else (-np.inf, np.inf)

    def weight(z):
        return math.exp(-beta * free_energy(z))

    num = _quad(lambda z: f(z) * weight(z), lo, hi)
    den = _quad(weight, lo, hi)
    return num / den


def mse(estimates, truth):
    """Mean squared error of a set of estimates against a reference value."""
    e = np.asarray(estimates, dtype=float)
    if e.size < 1:
        raise ValueError("need at least one estimate")
    return float(np.mean((e - truth) ** 2))


def efficiency_gain(mse_base, mse_new, time_base, time_new):
    """(MSE ratio) x (CPU-time ratio) of a baseline sampler over a candidate."""
    if min(mse_base, time_base, time_new) <= 0 or mse_new < 0:
        raise ValueError("MSEs and times must be positive")
    if mse_new == 0:
        warnings.warn("candidate MSE is exactly zero; gain is unbounded")
        return math.inf
    return (mse_base / mse_new) * (time_base / time_new)


@dataclass(frozen=True)
class KernelParams:
    """Gaussian bandwidth and evaluation grid for the smoothed moment curves."""

    epsilon: float = 0.02
    grid: np.ndarray = field(default_factory=lambda: np.linspace(-PI, PI, 129)[1:])

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def kernel_mean_variance(z_values, q_values, params: KernelParams, circular=True, normalized=True):
    """Gaussian-kernel regression of the scattered pairs onto the grid.

    Returns (m, sigma2, defined): the weighted mean and weighted variance of
    the q values around each grid point, and a boolean mask of grid points with
    nonzero kernel mass (elsewhere m and sigma2 are NaN, not zero). With
    normalized=False the raw 1/N-weighted sums including the Gaussian
    normalization constant are returned instead, for comparison plots.
    """
    z = np.asarray(z_values, dtype=float)
    q = np.asarray(q_values, dtype=float)
    if z.size == 0 or z.shape != q.shape:
        raise ValueError("need matching, non-empty z and q arrays")
    grid = np.asarray(params.grid, dtype=float)
    m = np.full(grid.shape, np.nan)
    s2 = np.full(grid.shape, np.nan)
    defined = np.zeros(grid.shape, dtype=bool)
    inv_two_eps2 = 1.0 / (2.0 * params.epsilon**2)
    norm_const = 1.0 / math.sqrt(2.0 * PI * params.epsilon**2)
    for i, g in enumerate(grid):
        d = wrap_angle(z - g) if circular else z - g
        w = np.exp(-d * d * inv_two_eps2)
        mass = w.sum()
        if mass <= 0.0:
            continue
        defined[i] = True
        if normalized:
            mi = float(np.dot(w, q) / mass)
            m[i] = mi
            s2[i] = float(np.dot(w, (q - mi) ** 2) / mass)
        else:
            mi = float(np.dot(w, q) * norm_const / z.size)
            m[i] = mi
            s2[i] = float(np.dot(w, (q - mi) ** 2) * norm_const / z.size)
    return m, s2, defined


def write_kernel_csv(fh, grid, m, s2, defined):
    """Grid outputs in the documented z,m,sigma2,defined schema."""
    fh.write("z,m,sigma2,defined\n")
    for g, mi, si, di in zip(grid, m, s2, defined):
        fh.write(f"{float(g)!r},{float(mi)!r},{float(si)!r},{int(di)}\n")


def bin_masses(density, edges):
    """Probability mass of an unnormalized density per bin, normalized to one."""
    edges = np.asarray(edges, dtype=float)
    masses = np.empty(edges.size - 1)
    for i in range(edges.size - 1):
        masses[i] = _quad(density, edges[i], edges[i + 1], epsrel=1e-9)
    total = masses.sum()
    if total <= 0:
        raise ValueError("density has no mass on the binned domain")
    return masses / total


def tv_distance_hist(samples, density, edges):
    """Total-variation distance between binned samples and a reference density.

    Both sides are reduced to probability vectors over the given bin edges;
    samples outside the edges contribute to the distance through the lost mass.
    """
    samples = np.asarray(samples, dtype=float)
    counts, _ = np.histogram(samples, bins=edges)
    p = counts / samples.size
    q = bin_masses(density, edges)
    return 0.5 * (np.abs(p - q).sum() + (1.0 - p.sum()))
