"""The micro-macro chain: proposal, macro test, reconstruction, estimate, micro test.

The chain lives on the extended state (x, z): the configuration and the
reaction-coordinate value are coupled only through the acceptance mechanism,
so rc(x) == z is not an invariant. The incumbent's marginal-density estimate
is cached on the state and reused until a move is accepted (grouped
independence), never recomputed in place.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import dynamics, pseudomarginal
from .dynamics import MacroProposalParams, ReconstructionParams
from .pseudomarginal import (
    EstimatorDegenerateError,
    TensorHistogram,
    estimate_log_mu_lambda,
    estimate_log_mu_lambda_reuse,
)


@dataclass
class ChainState:
    x: np.ndarray  # current configuration
    z: float  # current reaction-coordinate value
    log_mu_tilde: float  # cached log estimate of the marginal density at z
    xi: Optional[float] = None  # rc(x), cached to avoid recomputation per step

    def __post_init__(self):
        if not math.isfinite(self.log_mu_tilde):
            raise ValueError("cached log estimate must be finite")


@dataclass
class StepDiagnostics:
    macro_proposed: bool = True
    macro_accepted: bool = False
    micro_accepted: bool = False
    alpha_cg: float = 0.0
    alpha_f: float = 0.0
    z_proposed: float = float("nan")
    log_mu_tilde_new: float = float("-inf")
    recon_steps: int = 0  # microscopic force evaluations spent this step
    elapsed: float = 0.0  # wall-clock seconds spent in this step
    error: Optional[str] = None


@dataclass
class ChainParams:
    """Everything a chain needs besides its state and generator."""

    system: object
    beta: float
    mu0_bar: Callable[[float], float]
    macro: MacroProposalParams = field(default_factory=MacroProposalParams)
    recon: ReconstructionParams = field(default_factory=ReconstructionParams)
    k_eval: int = 15
    bin_width: float = pseudomarginal.default_bin_width(2.0 * 319225.0)
    estimator_mode: str = "exact"  # "exact" (fresh draws) or "reuse"

    def __post_init__(self):
        if self.estimator_mode not in ("exact", "reuse"):
            raise ValueError(f"unknown estimator mode {self.estimator_mode!r}")
        if self.k_eval < 1 or self.bin_width <= 0 or self.beta <= 0:
            raise ValueError("k_eval, bin_width and beta must be positive")


def exact_mu0_bar(system, beta) -> Callable[[float], float]:
    """Boltzmann weight of the analytic effective free energy (unnormalized)."""

    def mu0(z):
        return math.exp(-beta * system.free_energy(z))

    return mu0


def uniform_mu0_bar(z) -> float:
    """Flat macro density; every proposal passes the macro test."""
    return 1.0


def micro_accept(state: ChainState, z_prime, x_prime, log_mu_tilde_prime, mu0_bar, rng):
    """Metropolis test of the reconstructed sample against the cached estimate.

    alpha = min{1, exp(new - cached) * mu0_bar(z)/mu0_bar(z')}. On acceptance
    the caller installs (x', z', new estimate); the incumbent estimate is
    reused as-is until then. A -inf estimate rejects automatically.
    """
    if log_mu_tilde_prime == float("-inf"):
        return False, 0.0
    log_ratio = (
        log_mu_tilde_prime
        - state.log_mu_tilde
        + math.log(mu0_bar(state.z))
        - math.log(mu0_bar(z_prime))
    )
    alpha = 1.0 if log_ratio >= 0.0 else math.exp(log_ratio)
    return bool(rng.random() < alpha), alpha


def _estimate(z_prime, samples, params: ChainParams, rng) -> float:
    hist = TensorHistogram.from_samples(samples, params.bin_width)
    if params.estimator_mode == "reuse":
        return estimate_log_mu_lambda_reuse(
            z_prime, samples, hist, params.system, params.recon.lam, params.beta
        )
    return estimate_log_mu_lambda(
        z_prime, hist, params.k_eval, params.system, params.recon.lam, params.beta, rng
    )


def mm_mcmc_step(state: ChainState, params: ChainParams, rng):
    """One four-stage step; returns (new state, diagnostics).

    A macro rejection short-circuits before any microscopic force evaluation.
    Reconstruction blow-ups and degenerate estimates count as rejections and
    are recorded on the diagnostics.
    """
    diag = StepDiagnostics()
    t0 = time.perf_counter()
    z_prime = dynamics.propose_rc(
        state.z, params.macro, params.beta, rng, wrap=params.system.wrap_rc
    )
    diag.z_proposed = z_prime
    accepted, diag.alpha_cg = dynamics.macro_accept(state.z, z_prime, params.mu0_bar, rng)
    diag.macro_accepted = accepted
    if not accepted:
        diag.elapsed = time.perf_counter() - t0
        return state, diag

    try:
        samples = dynamics.reconstruct(
            state.x, z_prime, params.system, params.recon, params.beta, rng
        )
        diag.recon_steps = params.recon.n_steps
        log_mu_tilde_prime = _estimate(z_prime, samples, params, rng)
    except dynamics.ReconstructionDivergedError as exc:
        diag.recon_steps = exc.step_index
        diag.error = str(exc)
        diag.elapsed = time.perf_counter() - t0
        return state, diag
    except EstimatorDegenerateError as exc:
        diag.error = str(exc)
        diag.elapsed = time.perf_counter() - t0
        return state, diag

    diag.log_mu_tilde_new = log_mu_tilde_prime
    x_prime = samples[-1]
    accepted, diag.alpha_f = micro_accept(
        state, z_prime, x_prime, log_mu_tilde_prime, params.mu0_bar, rng
    )
    diag.micro_accepted = accepted
    diag.elapsed = time.perf_counter() - t0
    if accepted:
        return ChainState(x_prime, z_prime, log_mu_tilde_prime, params.system.rc(x_prime)), diag
    return state, diag


def init_chain(params: ChainParams, rng, x0=None) -> ChainState:
    """Start from the system's reference configuration with one estimator call."""
    x0 = params.system.initial_configuration() if x0 is None else np.asarray(x0, dtype=float)
    z0 = params.system.rc(x0)
    samples = dynamics.reconstruct(x0, z0, params.system, params.recon, params.beta, rng)
    log_mu0 = _estimate(z0, samples, params, rng)
    return ChainState(x0, z0, log_mu0, z0)


@dataclass
class ChainResult:
    z: np.ndarray
    xi_x: np.ndarray
    log_mu_tilde: np.ndarray
    macro_acc: np.ndarray
    micro_acc: np.ndarray
    alpha_cg: np.ndarray
    alpha_f: np.ndarray
    macro_rate: float
    micro_rate: float
    n_steps: int
    elapsed: float
    n_errors: int = 0
    final_state: Optional[ChainState] = None

    CSV_HEADER = "step,z,xi_x,log_mu_tilde,macro_acc,micro_acc,alpha_cg,alpha_f"

    def write_csv(self, fh):
        fh.write(self.CSV_HEADER + "\n")
        for i in range(self.n_steps):
            fh.write(
                f"{i},{float(self.z[i])!r},{float(self.xi_x[i])!r},"
                f"{float(self.log_mu_tilde[i])!r},"
                f"{int(self.macro_acc[i])},{int(self.micro_acc[i])},"
                f"{float(self.alpha_cg[i])!r},{float(self.alpha_f[i])!r}\n"
            )


def run_chain(
    params: ChainParams,
    n_steps: int,
    rng,
    state: Optional[ChainState] = None,
    estimate_sink: Optional[Callable[[float, float], None]] = None,
) -> ChainResult:
    """Drive the chain for n_steps and collect the per-step record.

    The micro acceptance rate is counted among macro-accepted proposals. When
    estimate_sink is given it receives (z', log estimate) for every fresh
    estimator call, accepted or not.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if state is None:
        state = init_chain(params, rng)
    z = np.empty(n_steps)
    xi = np.empty(n_steps)
    lmt = np.empty(n_steps)
    macro = np.zeros(n_steps, dtype=bool)
    micro = np.zeros(n_steps, dtype=bool)
    a_cg = np.empty(n_steps)
    a_f = np.empty(n_steps)
    n_errors = 0

    t0 = time.perf_counter()
    for i in range(n_steps):
        state, diag = mm_mcmc_step(state, params, rng)
        if state.xi is None:
            state.xi = params.system.rc(state.x)
        z[i] = state.z
        xi[i] = state.xi
        lmt[i] = state.log_mu_tilde
        macro[i] = diag.macro_accepted
        micro[i] = diag.micro_accepted
        a_cg[i] = diag.alpha_cg
        a_f[i] = diag.alpha_f
        if diag.error is not None:
            n_errors += 1
        if estimate_sink is not None and diag.macro_accepted and diag.error is None:
            estimate_sink(diag.z_proposed, diag.log_mu_tilde_new)
    elapsed = time.perf_counter() - t0

    n_macro = int(macro.sum())
    return ChainResult(
        z=z,
        xi_x=xi,
        log_mu_tilde=lmt,
        macro_acc=macro,
        micro_acc=micro,
        alpha_cg=a_cg,
        alpha_f=a_f,
        macro_rate=n_macro / n_steps,
        micro_rate=(int(micro.sum()) / n_macro) if n_macro else 0.0,
        n_steps=n_steps,
        elapsed=elapsed,
        n_errors=n_errors,
        final_state=state,
    )
