"""United-atom alkane chains: potential energy, gradients, and the torsion reaction coordinate.

Energies are stored divided by the Boltzmann constant, i.e. in Kelvin, so the
inverse temperature is simply ``beta = 1/T`` with ``T`` in Kelvin. Coordinates
are Cartesian and flat: a chain of N carbons is a ``(3N,)`` array in Angstrom.
Most evaluation routines also accept a leading batch axis ``(B, 3N)``.

The torsion convention is anchored so that the planar trans (zig-zag)
arrangement has angle zero; the planar cis arrangement sits on the +/-pi wrap
boundary. This makes the torsion free-energy polynomial, whose minimum is at
cos(angle) = 1, directly comparable with sampled histograms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _fast

TWO_PI = 2.0 * math.pi


class DegenerateGeometryError(ValueError):
    """Bond angle or dihedral evaluated on (near-)collinear atoms."""


def wrap_angle(z):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    if np.ndim(z) == 0:
        w = (float(z) + math.pi) % TWO_PI - math.pi
        return w + TWO_PI if w <= -math.pi else w
    w = np.mod(np.asarray(z, dtype=float) + math.pi, TWO_PI) - math.pi
    return np.where(w <= -math.pi, w + TWO_PI, w)


def _cross(a, b):
    """Cross product along the last axis; operands must share a shape."""
    out = np.empty(a.shape if a.ndim >= b.ndim else b.shape)
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def validate_configuration(x, n_atoms):
    """Check that x is a finite flat coordinate vector for n_atoms atoms."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size != 3 * n_atoms:
        raise ValueError(
            f"configuration must be a flat array of {3 * n_atoms} coordinates, got shape {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("configuration contains non-finite coordinates")
    return x


def _as_atoms(x):
    """View a (..., 3N) coordinate array as (..., N, 3)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] % 3 != 0:
        raise ValueError(f"trailing axis of length {x.shape[-1]} is not a multiple of 3")
    return x.reshape(x.shape[:-1] + (x.shape[-1] // 3, 3))


def dihedral_angle(x, quad=(0, 1, 2, 3)):
    """Torsion angle of four atoms, in (-pi, pi], zero at planar trans.

    ``x`` is a flat ``(3N,)`` configuration or a ``(..., 3N)`` batch; ``quad``
    holds four distinct atom indices along the chain. Raises
    DegenerateGeometryError when three consecutive atoms of the quadruple are
    collinear, which leaves the angle undefined.
    """
    i, j, k, l = quad
    if len({i, j, k, l}) != 4:
        raise ValueError(f"dihedral indices must be distinct, got {quad}")
    r = _as_atoms(x)
    b1 = r[..., j, :] - r[..., i, :]
    b2 = r[..., k, :] - r[..., j, :]
    b3 = r[..., l, :] - r[..., k, :]
    n1 = _cross(b1, b2)
    n2 = _cross(b2, b3)
    n1_sq = np.einsum("...i,...i", n1, n1)
    n2_sq = np.einsum("...i,...i", n2, n2)
    scale1 = np.einsum("...i,...i", b1, b1) * np.einsum("...i,...i", b2, b2)
    scale2 = np.einsum("...i,...i", b2, b2) * np.einsum("...i,...i", b3, b3)
    if np.any(n1_sq <= 1e-16 * scale1) or np.any(n2_sq <= 1e-16 * scale2):
        raise DegenerateGeometryError(f"collinear atoms in dihedral quadruple {quad}")
    b2_len = np.sqrt(np.einsum("...i,...i", b2, b2))
    sin_t = np.einsum("...i,...i", _cross(n1, n2), b2) / b2_len
    cos_t = np.einsum("...i,...i", n1, n2)
    # atan2 of the negated components shifts the conventional dihedral by pi,
    # putting trans at zero and the branch cut at cis
    ang = np.arctan2(-sin_t, -cos_t)
    if np.ndim(ang) == 0:
        return float(ang)
    return ang


def _dihedral_gradient_terms(r, quad):
    """Gradient of the dihedral w.r.t. the four atom positions of ``quad``.

    Returns (angle, g) with g of shape (4, 3). The four rows sum to zero.
    """
    i, j, k, l = quad
    b1 = r[j] - r[i]
    b2 = r[k] - r[j]
    b3 = r[l] - r[k]
    n1 = _cross(b1, b2)
    n2 = _cross(b2, b3)
    n1_sq = float(n1 @ n1)
    n2_sq = float(n2 @ n2)
    if n1_sq <= 1e-16 * float((b1 @ b1) * (b2 @ b2)) or n2_sq <= 1e-16 * float(
        (b2 @ b2) * (b3 @ b3)
    ):
        raise DegenerateGeometryError(f"collinear atoms in dihedral quadruple {quad}")
    b2_len = math.sqrt(float(b2 @ b2))
    sin_t = float(_cross(n1, n2) @ b2) / b2_len
    cos_t = float(n1 @ n2)
    ang = math.atan2(-sin_t, -cos_t)

    g = np.empty((4, 3))
    g[0] = -(b2_len / n1_sq) * n1
    g[3] = (b2_len / n2_sq) * n2
    g[1] = -g[0] + (float(b1 @ b2) / (n1_sq * b2_len)) * n1 + (
        float(b2 @ b3) / (n2_sq * b2_len)
    ) * n2
    g[2] = -(g[0] + g[1] + g[3])
    return ang, g


def _angle_gradient_terms(r, triple):
    """Bond angle at the middle atom of ``triple`` and its gradient (3, 3)."""
    i, j, k = triple
    u = r[i] - r[j]
    v = r[k] - r[j]
    nu = math.sqrt(float(u @ u))
    nv = math.sqrt(float(v @ v))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateGeometryError(f"coincident atoms in angle triple {triple}")
    c = float(u @ v) / (nu * nv)
    c = min(1.0, max(-1.0, c))
    s = math.sqrt(max(0.0, 1.0 - c * c))
    if s < 1e-8:
        raise DegenerateGeometryError(f"collinear atoms in angle triple {triple}")
    theta = math.acos(c)
    g = np.empty((3, 3))
    g[0] = -(v / (nu * nv) - c * u / (nu * nu)) / s
    g[2] = -(u / (nu * nv) - c * v / (nv * nv)) / s
    g[1] = -(g[0] + g[2])
    return theta, g


@dataclass(frozen=True)
class AlkaneParams:
    """Force-field constants of a united-atom carbon chain (energies in Kelvin).

    The defaults describe butane; longer chains reuse the same bond, angle and
    torsion terms along the backbone.
    """

    n_carbons: int = 4
    k_b: float = 319225.0  # bond stiffness, K / Angstrom^2
    k_a: float = 62500.0  # angle stiffness, K / rad^2
    r0: float = 1.540  # equilibrium bond length, Angstrom
    theta0: float = math.radians(114.0)  # equilibrium bond angle, rad
    c: tuple[float, float, float, float] = (1031.36, 2037.82, 158.52, -3227.70)
    temperature: float = 300.0  # Kelvin

    def __post_init__(self):
        if self.n_carbons < 4:
            raise ValueError("a chain needs at least 4 carbons to define a torsion")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if len(self.c) != 4:
            raise ValueError("exactly four torsion coefficients are required")

    @property
    def beta(self) -> float:
        return 1.0 / self.temperature

    @property
    def n_dof(self) -> int:
        return 3 * self.n_carbons


def analytic_free_energy(params: AlkaneParams, z):
    """Torsion free energy: cubic polynomial in cos(z), zero at z = 0."""
    c0, c1, c2, c3 = params.c
    u = np.cos(z)
    a = c0 + u * (c1 + u * (c2 + u * c3))
    if np.ndim(z) == 0:
        return float(a)
    return a


def free_energy_derivative(params: AlkaneParams, z):
    """d/dz of analytic_free_energy."""
    _, c1, c2, c3 = params.c
    u = np.cos(z)
    d = -np.sin(z) * (c1 + u * (2.0 * c2 + u * (3.0 * c3)))
    if np.ndim(z) == 0:
        return float(d)
    return d


def potential_energy(params: AlkaneParams, x):
    """Chain potential: stiff bonds, stiff angles, one torsion term per quadruple.

    Accepts a single flat configuration or a batch (..., 3N); returns a float
    or an array of matching leading shape.
    """
    n = params.n_carbons
    r = _as_atoms(x)
    if r.shape[-2] != n:
        raise ValueError(f"expected {n} atoms, got {r.shape[-2]}")

    d = r[..., 1:, :] - r[..., :-1, :]
    lens = np.sqrt(np.einsum("...i,...i", d, d))
    e_bond = 0.5 * params.k_b * np.sum((lens - params.r0) ** 2, axis=-1)

    u = r[..., :-2, :] - r[..., 1:-1, :]
    v = r[..., 2:, :] - r[..., 1:-1, :]
    nu = np.sqrt(np.einsum("...i,...i", u, u))
    nv = np.sqrt(np.einsum("...i,...i", v, v))
    cos_th = np.clip(np.einsum("...i,...i", u, v) / (nu * nv), -1.0, 1.0)
    theta = np.arccos(cos_th)
    e_angle = 0.5 * params.k_a * np.sum((theta - params.theta0) ** 2, axis=-1)

    e_tors = 0.0
    if n >= 4:
        b1 = d[..., :-2, :]
        b2 = d[..., 1:-1, :]
        b3 = d[..., 2:, :]
        n1 = _cross(b1, b2)
        n2 = _cross(b2, b3)
        n1_sq = np.einsum("...i,...i", n1, n1)
        n2_sq = np.einsum("...i,...i", n2, n2)
        s1 = np.einsum("...i,...i", b1, b1) * np.einsum("...i,...i", b2, b2)
        s2 = np.einsum("...i,...i", b2, b2) * np.einsum("...i,...i", b3, b3)
        if np.any(n1_sq <= 1e-16 * s1) or np.any(n2_sq <= 1e-16 * s2):
            raise DegenerateGeometryError("collinear atoms in a torsion quadruple")
        b2_len = np.sqrt(np.einsum("...i,...i", b2, b2))
        sin_t = np.einsum("...i,...i", _cross(n1, n2), b2) / b2_len
        cos_t = np.einsum("...i,...i", n1, n2)
        tau = np.arctan2(-sin_t, -cos_t)
        e_tors = np.sum(analytic_free_energy(params, tau), axis=-1)

    e = e_bond + e_angle + e_tors
    if np.ndim(e) == 0:
        return float(e)
    return e


def potential_gradient(params: AlkaneParams, x):
    """Analytic Cartesian gradient of potential_energy for one configuration."""
    n = params.n_carbons
    x = np.asarray(x, dtype=float)
    r = x.reshape(n, 3)
    g = np.zeros_like(r)

    # bonds: consecutive pairs
    d = r[1:] - r[:-1]
    lens = np.sqrt(np.einsum("ij,ij->i", d, d))
    if np.any(lens == 0.0):
        raise DegenerateGeometryError("coincident bonded atoms")
    f = (params.k_b * (lens - params.r0) / lens)[:, None] * d
    g[:-1] -= f
    g[1:] += f

    # angles: consecutive triples, vertex in the middle
    u = r[:-2] - r[1:-1]
    v = r[2:] - r[1:-1]
    nu = np.sqrt(np.einsum("ij,ij->i", u, u))
    nv = np.sqrt(np.einsum("ij,ij->i", v, v))
    cos_th = np.clip(np.einsum("ij,ij->i", u, v) / (nu * nv), -1.0, 1.0)
    sin_th = np.sqrt(np.maximum(0.0, 1.0 - cos_th * cos_th))
    if np.any(sin_th < 1e-8):
        raise DegenerateGeometryError("collinear atoms in an angle triple")
    theta = np.arccos(cos_th)
    w = params.k_a * (theta - params.theta0)
    gi = -(v / (nu * nv)[:, None] - cos_th[:, None] * u / (nu * nu)[:, None]) / sin_th[:, None]
    gk = -(u / (nu * nv)[:, None] - cos_th[:, None] * v / (nv * nv)[:, None]) / sin_th[:, None]
    g[:-2] += w[:, None] * gi
    g[2:] += w[:, None] * gk
    g[1:-1] -= w[:, None] * (gi + gk)

    # torsions: consecutive quadruples
    if n >= 4:
        b1 = d[:-2]
        b2 = d[1:-1]
        b3 = d[2:]
        n1 = _cross(b1, b2)
        n2 = _cross(b2, b3)
        n1_sq = np.einsum("ij,ij->i", n1, n1)
        n2_sq = np.einsum("ij,ij->i", n2, n2)
        s1 = np.einsum("ij,ij->i", b1, b1) * np.einsum("ij,ij->i", b2, b2)
        s2 = np.einsum("ij,ij->i", b2, b2) * np.einsum("ij,ij->i", b3, b3)
        if np.any(n1_sq <= 1e-16 * s1) or np.any(n2_sq <= 1e-16 * s2):
            raise DegenerateGeometryError("collinear atoms in a torsion quadruple")
        b2_len = np.sqrt(np.einsum("ij,ij->i", b2, b2))
        sin_t = np.einsum("ij,ij->i", _cross(n1, n2), b2) / b2_len
        cos_t = np.einsum("ij,ij->i", n1, n2)
        tau = np.arctan2(-sin_t, -cos_t)
        w = free_energy_derivative(params, tau)
        g0 = -(b2_len / n1_sq)[:, None] * n1
        g3 = (b2_len / n2_sq)[:, None] * n2
        g1 = -g0 + (np.einsum("ij,ij->i", b1, b2) / (n1_sq * b2_len))[:, None] * n1 + (
            np.einsum("ij,ij->i", b2, b3) / (n2_sq * b2_len)
        )[:, None] * n2
        g2 = -(g0 + g1 + g3)
        if np.ndim(w) == 0:
            w = np.asarray([w])
        g[:-3] += w[:, None] * g0
        g[1:-2] += w[:, None] * g1
        g[2:-1] += w[:, None] * g2
        g[3:] += w[:, None] * g3

    return g.reshape(-1)


def _chain_gradient_terms(params: AlkaneParams, x, spring=None):
    """Shared fast path: gradient of the chain potential on one configuration.

    All geometric intermediates (bond vectors, lengths, cross products) are
    computed once and reused by the bond, angle and torsion terms. When
    ``spring = (lam, z_prime)`` is given, ``lam * wrap(tau0 - z_prime)`` is
    added to the first torsion's scalar weight, which turns the result into
    the drift of the biased dynamics at zero extra cost (the reaction
    coordinate is that torsion).

    Degenerate geometries are not screened here; they surface as non-finite
    entries that callers detect.
    """
    n = params.n_carbons
    r = np.asarray(x, dtype=float).reshape(n, 3)
    g = np.zeros_like(r)

    d = r[1:] - r[:-1]
    d_sq = np.einsum("ij,ij->i", d, d)
    lens = np.sqrt(d_sq)

    f = (params.k_b * (lens - params.r0) / lens)[:, None] * d
    g[:-1] -= f
    g[1:] += f

    dot_d = np.einsum("ij,ij->i", d[:-1], d[1:])
    nu = lens[:-1]
    nv = lens[1:]
    cos_th = np.clip(-dot_d / (nu * nv), -1.0, 1.0)
    sin_th = np.sqrt(np.maximum(1e-300, 1.0 - cos_th * cos_th))
    w_a = (params.k_a * (np.arccos(cos_th) - params.theta0) / sin_th)[:, None]
    gi = -(d[1:] / (nu * nv)[:, None] + cos_th[:, None] * d[:-1] / d_sq[:-1, None])
    gk = d[:-1] / (nu * nv)[:, None] + cos_th[:, None] * d[1:] / d_sq[1:, None]
    g[:-2] += w_a * gi
    g[2:] += w_a * gk
    g[1:-1] -= w_a * (gi + gk)

    c_vec = _cross(d[:-1], d[1:])
    c_sq = np.einsum("ij,ij->i", c_vec, c_vec)
    n1 = c_vec[:-1]
    n2 = c_vec[1:]
    n1_sq = c_sq[:-1]
    n2_sq = c_sq[1:]
    b2 = d[1:-1]
    b2_len = lens[1:-1]
    sin_t = np.einsum("ij,ij->i", _cross(n1, n2), b2) / b2_len
    cos_t = np.einsum("ij,ij->i", n1, n2)
    tau = np.arctan2(-sin_t, -cos_t)
    u = np.cos(tau)
    c0, c1, c2, c3 = params.c
    w_t = -np.sin(tau) * (c1 + u * (2.0 * c2 + u * (3.0 * c3)))
    if spring is not None:
        lam, z_prime = spring
        w_t[0] += lam * wrap_angle(tau[0] - z_prime)
    g0 = -(b2_len / n1_sq)[:, None] * n1
    g3 = (b2_len / n2_sq)[:, None] * n2
    g1 = -g0 + (dot_d[:-1] / (n1_sq * b2_len))[:, None] * n1 + (
        dot_d[1:] / (n2_sq * b2_len)
    )[:, None] * n2
    g2 = -(g0 + g1 + g3)
    w_t = w_t[:, None]
    g[:-3] += w_t * g0
    g[1:-2] += w_t * g1
    g[2:-1] += w_t * g2
    g[3:] += w_t * g3

    return g, tau, lens, cos_th


def chain_biased_drift(params: AlkaneParams, x, z_prime, lam):
    """Drift of the biased reconstruction dynamics (gradient plus spring pull)."""
    g, _, _, _ = _chain_gradient_terms(params, x, spring=(lam, z_prime))
    return g.reshape(-1)


def potential_with_gradient(params: AlkaneParams, x):
    """Energy and gradient in one pass over shared intermediates."""
    g, tau, lens, cos_th = _chain_gradient_terms(params, x)
    e = (
        0.5 * params.k_b * float(np.sum((lens - params.r0) ** 2))
        + 0.5 * params.k_a * float(np.sum((np.arccos(cos_th) - params.theta0) ** 2))
        + float(np.sum(analytic_free_energy(params, tau)))
    )
    return e, g.reshape(-1)


def rc_value(x):
    """Reaction coordinate: torsion angle of the first four atoms."""
    return dihedral_angle(x, (0, 1, 2, 3))


def rc_gradient(x):
    """Analytic Cartesian gradient of rc_value; zero beyond the first four atoms."""
    x = np.asarray(x, dtype=float)
    r = x.reshape(-1, 3)
    if r.shape[0] < 4:
        raise ValueError("need at least four atoms for the torsion reaction coordinate")
    _, terms = _dihedral_gradient_terms(r, (0, 1, 2, 3))
    g = np.zeros_like(r)
    g[:4] = terms
    return g.reshape(-1)


def ideal_configuration(params: AlkaneParams):
    """Planar zig-zag chain with every internal coordinate at its equilibrium.

    All bonds have length r0, all angles theta0, and every torsion is exactly
    zero (trans), so the potential energy vanishes.
    """
    n = params.n_carbons
    delta = 0.5 * (math.pi - params.theta0)
    r = np.zeros((n, 3))
    direction = np.array([math.cos(delta), math.sin(delta), 0.0])
    for i in range(1, n):
        r[i] = r[i - 1] + params.r0 * direction
        direction = direction * np.array([1.0, -1.0, 1.0])
    return r.reshape(-1)


def save_configuration(path, x):
    """Write one configuration as a single CSV row with header x0,y0,z0,..."""
    x = np.asarray(x, dtype=float)
    n = x.size // 3
    header = ",".join(f"x{i},y{i},z{i}" for i in range(n))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        fh.write(",".join(repr(float(v)) for v in x) + "\n")


def load_configuration(path):
    """Read a configuration written by save_configuration."""
    with open(path) as fh:
        fh.readline()
        row = fh.readline().strip()
    return np.array([float(v) for v in row.split(",")])


class AlkaneSystem:
    """A united-atom carbon chain bundled with its reaction coordinate.

    Exposes the informal sampler-facing interface shared by all test systems:
    ``potential``, ``gradient``, ``rc``, ``rc_gradient``, ``free_energy``,
    ``wrap_rc``, ``rc_diff``, ``initial_configuration``, plus ``n_dof`` and
    ``rc_periodic``. The reaction coordinate is an angle, so differences wrap.
    """

    rc_periodic = True

    def __init__(self, params: AlkaneParams | None = None):
        self.params = params if params is not None else AlkaneParams()

    @property
    def n_dof(self) -> int:
        return self.params.n_dof

    @property
    def beta(self) -> float:
        return self.params.beta

    def potential(self, x):
        return potential_energy(self.params, x)

    def gradient(self, x):
        return potential_gradient(self.params, x)

    def rc(self, x):
        return rc_value(x)

    def rc_gradient(self, x):
        return rc_gradient(x)

    def biased_drift(self, x, z_prime, lam):
        return chain_biased_drift(self.params, x, z_prime, lam)

    def potential_and_gradient(self, x):
        if _fast.HAS_NUMBA:
            p = self.params
            return _fast.energy_and_gradient(
                np.asarray(x, dtype=float), p.k_b, p.k_a, p.r0, p.theta0, *p.c
            )
        return potential_with_gradient(self.params, x)

    def run_biased_steps(self, x, z_prime, lam, dt, noise):
        """Biased-dynamics iterates for pre-drawn noise; (iterates, bad_step).

        ``noise`` holds the pre-scaled increments, one row per step; bad_step
        is the index of the first non-finite iterate or -1.
        """
        out = np.empty_like(noise)
        p = self.params
        if _fast.HAS_NUMBA:
            bad = _fast.run_biased_steps(
                np.asarray(x, dtype=float),
                p.k_b, p.k_a, p.r0, p.theta0, *p.c,
                lam, z_prime, dt, noise, out,
            )
            return out, bad
        xk = np.asarray(x, dtype=float)
        for k in range(noise.shape[0]):
            xk = xk - dt * chain_biased_drift(p, xk, z_prime, lam) + noise[k]
            out[k] = xk
            if not np.all(np.isfinite(xk)):
                return out, k
        return out, -1

    def free_energy(self, z):
        return analytic_free_energy(self.params, z)

    def wrap_rc(self, z):
        return wrap_angle(z)

    def rc_diff(self, a, b):
        return wrap_angle(a - b)

    def initial_configuration(self):
        return ideal_configuration(self.params)


def butane_system(temperature: float = 300.0) -> AlkaneSystem:
    return AlkaneSystem(AlkaneParams(n_carbons=4, temperature=temperature))


def alkane_system(n_carbons: int, temperature: float = 300.0) -> AlkaneSystem:
    return AlkaneSystem(AlkaneParams(n_carbons=n_carbons, temperature=temperature))


class QuadraticTestSystem:
    """Isotropic quadratic well with the first coordinate as reaction coordinate.

    A fully analytic stand-in used by oracles and tests: the marginal of the
    first coordinate is Gaussian, so the effective free energy is
    0.5 * kappa * z**2 exactly. The reaction coordinate lives on the real line
    (no wrapping).
    """

    rc_periodic = False

    def __init__(self, kappa: float = 1.0, dim: int = 1):
        if kappa <= 0 or dim < 1:
            raise ValueError("kappa must be positive and dim at least 1")
        self.kappa = float(kappa)
        self.n_dof = int(dim)

    def potential(self, x):
        x = np.asarray(x, dtype=float)
        e = 0.5 * self.kappa * np.sum(x * x, axis=-1)
        if np.ndim(e) == 0:
            return float(e)
        return e

    def gradient(self, x):
        return self.kappa * np.asarray(x, dtype=float)

    def rc(self, x):
        x = np.asarray(x, dtype=float)
        z = x[..., 0]
        if np.ndim(z) == 0:
            return float(z)
        return z

    def rc_gradient(self, x):
        g = np.zeros(self.n_dof)
        g[0] = 1.0
        return g

    def free_energy(self, z):
        a = 0.5 * self.kappa * np.square(z)
        if np.ndim(z) == 0:
            return float(a)
        return a

    def wrap_rc(self, z):
        return z

    def rc_diff(self, a, b):
        return a - b

    def initial_configuration(self):
        return np.zeros(self.n_dof)
