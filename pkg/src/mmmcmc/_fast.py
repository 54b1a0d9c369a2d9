"""Optional numba-accelerated kernels for the chain systems.

Everything here mirrors the vectorized numpy implementations in ``model``;
when numba is unavailable the callers silently fall back to those. The
jitted routines only change floating-point rounding at the last digit
(different operation order), never semantics.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is optional
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def _chain_terms(r, kb, ka, r0, theta0, c0, c1, c2, c3, lam, z_prime, g):
    """Energy, gradient and first torsion of a carbon chain, in one pass.

    Writes the gradient into ``g`` (shape (n, 3)); when ``lam`` is nonzero the
    spring pull lam * wrap(tau0 - z_prime) is folded into the first torsion
    weight, turning the gradient into the biased drift. Returns (energy, tau0).
    """
    n = r.shape[0]
    for i in range(n):
        for a in range(3):
            g[i, a] = 0.0

    d = np.empty((n - 1, 3))
    lens = np.empty(n - 1)
    energy = 0.0
    for t in range(n - 1):
        for a in range(3):
            d[t, a] = r[t + 1, a] - r[t, a]
        ln = math.sqrt(d[t, 0] ** 2 + d[t, 1] ** 2 + d[t, 2] ** 2)
        lens[t] = ln
        energy += 0.5 * kb * (ln - r0) ** 2
        coef = kb * (ln - r0) / ln
        for a in range(3):
            f = coef * d[t, a]
            g[t, a] -= f
            g[t + 1, a] += f

    for t in range(n - 2):
        nu = lens[t]
        nv = lens[t + 1]
        dot = d[t, 0] * d[t + 1, 0] + d[t, 1] * d[t + 1, 1] + d[t, 2] * d[t + 1, 2]
        cos_th = -dot / (nu * nv)
        if cos_th > 1.0:
            cos_th = 1.0
        elif cos_th < -1.0:
            cos_th = -1.0
        sin_sq = 1.0 - cos_th * cos_th
        if sin_sq < 1e-300:
            sin_sq = 1e-300
        sin_th = math.sqrt(sin_sq)
        theta = math.acos(cos_th)
        energy += 0.5 * ka * (theta - theta0) ** 2
        w = ka * (theta - theta0) / sin_th
        for a in range(3):
            gi = -(d[t + 1, a] / (nu * nv) + cos_th * d[t, a] / (nu * nu))
            gk = d[t, a] / (nu * nv) + cos_th * d[t + 1, a] / (nv * nv)
            g[t, a] += w * gi
            g[t + 2, a] += w * gk
            g[t + 1, a] -= w * (gi + gk)

    tau0 = 0.0
    if n >= 4:
        c_vec = np.empty((n - 2, 3))
        c_sq = np.empty(n - 2)
        for t in range(n - 2):
            c_vec[t, 0] = d[t, 1] * d[t + 1, 2] - d[t, 2] * d[t + 1, 1]
            c_vec[t, 1] = d[t, 2] * d[t + 1, 0] - d[t, 0] * d[t + 1, 2]
            c_vec[t, 2] = d[t, 0] * d[t + 1, 1] - d[t, 1] * d[t + 1, 0]
            c_sq[t] = c_vec[t, 0] ** 2 + c_vec[t, 1] ** 2 + c_vec[t, 2] ** 2
        for t in range(n - 3):
            b2_len = lens[t + 1]
            cx = c_vec[t, 1] * c_vec[t + 1, 2] - c_vec[t, 2] * c_vec[t + 1, 1]
            cy = c_vec[t, 2] * c_vec[t + 1, 0] - c_vec[t, 0] * c_vec[t + 1, 2]
            cz = c_vec[t, 0] * c_vec[t + 1, 1] - c_vec[t, 1] * c_vec[t + 1, 0]
            sin_t = (cx * d[t + 1, 0] + cy * d[t + 1, 1] + cz * d[t + 1, 2]) / b2_len
            cos_t = (
                c_vec[t, 0] * c_vec[t + 1, 0]
                + c_vec[t, 1] * c_vec[t + 1, 1]
                + c_vec[t, 2] * c_vec[t + 1, 2]
            )
            tau = math.atan2(-sin_t, -cos_t)
            if t == 0:
                tau0 = tau
            u = math.cos(tau)
            energy += c0 + u * (c1 + u * (c2 + u * c3))
            w = -math.sin(tau) * (c1 + u * (2.0 * c2 + u * (3.0 * c3)))
            if t == 0 and lam != 0.0:
                v = (tau - z_prime + math.pi) % (2.0 * math.pi) - math.pi
                if v <= -math.pi:
                    v += 2.0 * math.pi
                w += lam * v
            dot12 = d[t, 0] * d[t + 1, 0] + d[t, 1] * d[t + 1, 1] + d[t, 2] * d[t + 1, 2]
            dot23 = (
                d[t + 1, 0] * d[t + 2, 0]
                + d[t + 1, 1] * d[t + 2, 1]
                + d[t + 1, 2] * d[t + 2, 2]
            )
            k0 = -b2_len / c_sq[t]
            k3 = b2_len / c_sq[t + 1]
            k1a = dot12 / (c_sq[t] * b2_len)
            k1b = dot23 / (c_sq[t + 1] * b2_len)
            for a in range(3):
                g0 = k0 * c_vec[t, a]
                g3 = k3 * c_vec[t + 1, a]
                g1 = -g0 + k1a * c_vec[t, a] + k1b * c_vec[t + 1, a]
                g2 = -(g0 + g1 + g3)
                g[t, a] += w * g0
                g[t + 1, a] += w * g1
                g[t + 2, a] += w * g2
                g[t + 3, a] += w * g3
    return energy, tau0


@njit(cache=True)
def run_biased_steps(x0, kb, ka, r0, theta0, c0, c1, c2, c3, lam, z_prime, dt, noise, out):
    """Integrate the biased dynamics; noise rows are pre-scaled increments.

    Fills ``out`` (n_steps, 3n) with the iterates and returns the index of the
    first non-finite step, or -1 when all steps stayed finite.
    """
    n3 = x0.shape[0]
    n = n3 // 3
    r = np.empty((n, 3))
    for i in range(n):
        for a in range(3):
            r[i, a] = x0[3 * i + a]
    g = np.empty((n, 3))
    for k in range(noise.shape[0]):
        _chain_terms(r, kb, ka, r0, theta0, c0, c1, c2, c3, lam, z_prime, g)
        ok = True
        for i in range(n):
            for a in range(3):
                v = r[i, a] - dt * g[i, a] + noise[k, 3 * i + a]
                r[i, a] = v
                out[k, 3 * i + a] = v
                if not np.isfinite(v):
                    ok = False
        if not ok:
            return k
    return -1


@njit(cache=True)
def energy_and_gradient(x, kb, ka, r0, theta0, c0, c1, c2, c3):
    """Chain potential and its gradient as (energy, flat gradient)."""
    n = x.shape[0] // 3
    r = np.empty((n, 3))
    for i in range(n):
        for a in range(3):
            r[i, a] = x[3 * i + a]
    g = np.empty((n, 3))
    energy, _ = _chain_terms(r, kb, ka, r0, theta0, c0, c1, c2, c3, 0.0, 0.0, g)
    return energy, g.reshape(-1)
