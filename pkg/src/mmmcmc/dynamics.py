"""Time-stepping kernels: macroscopic Brownian proposal, biased reconstruction, MALA.

All kernels are pure given an explicit numpy Generator, so independent chains
can run concurrently as long as each owns its generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import wrap_angle


class ReconstructionDivergedError(RuntimeError):
    """The biased simulation produced a non-finite state (time step too large)."""

    def __init__(self, step_index: int):
        super().__init__(f"reconstruction diverged at step {step_index}")
        self.step_index = step_index


@dataclass(frozen=True)
class MacroProposalParams:
    """Time step of the Brownian proposal on the reaction coordinate."""

    dt_macro: float = 0.001

    def __post_init__(self):
        if self.dt_macro <= 0:
            raise ValueError("dt_macro must be positive")


@dataclass(frozen=True)
class ReconstructionParams:
    """Spring strength, time step and length of the biased simulation.

    The default time step couples to the spring strength as dt_micro =
    0.01 / lam, which keeps the stiffest retained mode stable.
    """

    lam: float = 2.0 * 319225.0
    dt_micro: float = 0.01 / (2.0 * 319225.0)
    n_steps: int = 15

    def __post_init__(self):
        # lam = 0 is allowed: it switches the coupling off, leaving plain
        # overdamped dynamics on the potential
        if self.lam < 0 or self.dt_micro <= 0 or self.n_steps < 1:
            raise ValueError("lam must be non-negative, dt_micro positive, n_steps at least 1")

    @classmethod
    def with_defaults(cls, lam: float, n_steps: int = 15, dt_factor: float = 0.01):
        return cls(lam=lam, dt_micro=dt_factor / lam, n_steps=n_steps)


def propose_rc(z_n, p: MacroProposalParams, beta, rng, wrap=wrap_angle):
    """Brownian increment on the reaction coordinate, wrapped into its domain.

    The proposal density is symmetric (on the circle for an angular coordinate),
    so its forward/backward ratio is one and never enters acceptance.
    """
    step = math.sqrt(2.0 * p.dt_macro / beta) * rng.standard_normal()
    return wrap(z_n + step)


def macro_accept(z_n, z_prime, mu0_bar, rng):
    """Metropolis test of z_prime against the approximate macro density mu0_bar.

    Returns (accepted, alpha). Non-finite or non-positive density values reject
    the move with alpha = 0.
    """
    v_old = float(mu0_bar(z_n))
    v_new = float(mu0_bar(z_prime))
    if not (math.isfinite(v_old) and math.isfinite(v_new)) or v_old <= 0.0 or v_new < 0.0:
        return False, 0.0
    alpha = min(1.0, v_new / v_old)
    return bool(rng.random() < alpha), alpha


def reconstruct(x_n, z_prime, system, p: ReconstructionParams, beta, rng):
    """Run the biased overdamped dynamics pulling x toward the level set of z_prime.

    Iterates
        x <- x - dt*grad(V) - dt*lam*diff(rc(x), z_prime)*grad(rc) + sqrt(2*dt/beta)*noise
    for n_steps steps, where diff is the system's (possibly wrapped) reaction
    coordinate difference. Returns the full (n_steps, n_dof) array of iterates;
    the last row is the microscopic proposal. Systems may provide a fused
    ``biased_drift`` for the combined drift; the generic composition is used
    otherwise.
    """
    dt = p.dt_micro
    x = np.array(x_n, dtype=float, copy=True)
    noise = math.sqrt(2.0 * dt / beta) * rng.standard_normal((p.n_steps, x.size))

    stepper = getattr(system, "run_biased_steps", None)
    if stepper is not None:
        out, bad = stepper(x, z_prime, p.lam, dt, noise)
        if bad >= 0:
            raise ReconstructionDivergedError(bad)
        return out

    out = np.empty((p.n_steps, x.size))
    drift_fn = getattr(system, "biased_drift", None)
    with np.errstate(over="ignore", invalid="ignore"):  # blow-ups detected below
        for k in range(p.n_steps):
            if drift_fn is not None:
                drift = drift_fn(x, z_prime, p.lam)
            else:
                drift = system.gradient(x) + p.lam * system.rc_diff(
                    system.rc(x), z_prime
                ) * system.rc_gradient(x)
            x = x - dt * drift + noise[k]
            if not np.all(np.isfinite(x)):
                raise ReconstructionDivergedError(k)
            out[k] = x
    return out


def _potential_and_gradient(system, x):
    fused = getattr(system, "potential_and_gradient", None)
    if fused is not None:
        return fused(x)
    return system.potential(x), system.gradient(x)


def mala_step(x_n, system, dt, beta, rng, cached=None):
    """One Metropolis-adjusted Langevin step targeting exp(-beta*V).

    The proposal is x - dt*grad(V) + sqrt(2*dt/beta)*noise and the acceptance
    ratio includes the asymmetric Gaussian transition densities. Returns
    (next_state, accepted); a non-finite proposal is rejected outright.
    ``cached`` may hold (V, grad) of x_n to avoid recomputing it.
    """
    x_n = np.asarray(x_n, dtype=float)
    var = 2.0 * dt / beta
    v_n, g_n = _potential_and_gradient(system, x_n) if cached is None else cached
    mean_fwd = x_n - dt * g_n
    y = mean_fwd + math.sqrt(var) * rng.standard_normal(x_n.size)
    if not np.all(np.isfinite(y)):
        return x_n, False
    v_y, g_y = _potential_and_gradient(system, y)
    if not math.isfinite(v_y):
        return x_n, False
    mean_rev = y - dt * g_y
    log_q_fwd = -float(np.sum((y - mean_fwd) ** 2)) / (2.0 * var)
    log_q_rev = -float(np.sum((x_n - mean_rev) ** 2)) / (2.0 * var)
    log_alpha = -beta * (v_y - v_n) + log_q_rev - log_q_fwd
    if log_alpha >= 0.0 or rng.random() < math.exp(log_alpha):
        return y, True
    return x_n, False


def run_mala(x0, system, dt, beta, n_steps, rng):
    """MALA chain of n_steps; returns (rc trace, acceptance rate, elapsed seconds)."""
    import time

    x = np.array(x0, dtype=float, copy=True)
    xi = np.empty(n_steps)
    n_acc = 0
    var = 2.0 * dt / beta
    noise = math.sqrt(var)
    v, g = _potential_and_gradient(system, x)
    t0 = time.perf_counter()
    for i in range(n_steps):
        mean_fwd = x - dt * g
        y = mean_fwd + noise * rng.standard_normal(x.size)
        if np.all(np.isfinite(y)):
            v_y, g_y = _potential_and_gradient(system, y)
            if math.isfinite(v_y):
                log_q_fwd = -float(np.sum((y - mean_fwd) ** 2)) / (2.0 * var)
                log_q_rev = -float(np.sum((x - (y - dt * g_y)) ** 2)) / (2.0 * var)
                log_alpha = -beta * (v_y - v) + log_q_rev - log_q_fwd
                if log_alpha >= 0.0 or rng.random() < math.exp(log_alpha):
                    x, v, g = y, v_y, g_y
                    n_acc += 1
        xi[i] = system.rc(x)
    elapsed = time.perf_counter() - t0
    return xi, n_acc / n_steps, elapsed
