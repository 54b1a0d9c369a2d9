"""Configuration-driven experiment runner emitting CSV artifacts and a manifest.

Experiments are seeded batch jobs: one master seed, per-run generators derived
by spawn key so run i is reproducible independently of how many runs execute
or on how many workers. Every experiment writes a ``manifest.txt`` of flat
``key=value`` lines holding the fully resolved configuration; feeding that
file back through ``--config`` reproduces the run.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from . import __version__, analysis, dynamics, mcmc, model, pseudomarginal
from .analysis import KernelParams

EXPERIMENTS = (
    "butane-hist",
    "qlambda-scatter",
    "acc-vs-n",
    "acc-vs-k",
    "var-vs-k",
    "eff-gain",
    "mala-baseline",
)


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


@dataclass
class ExperimentConfig:
    system: str = "butane"  # butane | alkane
    n_carbons: int = 4
    temperature: float = 300.0
    mubar: str = "exact"  # exact | uniform
    dt_macro: float = 0.001
    lambda_factor: float = 2.0  # spring strength over bond stiffness
    dt_micro_factor: float = 0.01  # dt_micro * lambda
    k_recon: int = 15
    k_eval: int = 15
    bin_width: float = 0.0  # 0 -> sqrt(1/(2*lambda))
    estimator_mode: str = "exact"  # exact | reuse
    n_steps: int = 100_000
    n_runs: int = 100
    seed: int = 0
    scale: float = 1.0
    workers: int = 0  # 0 -> cpu count, capped by MMMCMC_THREADS
    output_dir: str = "out"
    n_list: str = "4,8,16,32"
    k_list: str = ""
    z_points: str = ""
    burn_in: int = 2000  # equilibration steps before each direct estimate

    def validate(self):
        if self.system not in ("butane", "alkane"):
            raise ConfigError(f"system must be butane or alkane, got {self.system!r}")
        if self.mubar not in ("exact", "uniform"):
            raise ConfigError(f"mubar must be exact or uniform, got {self.mubar!r}")
        if self.estimator_mode not in ("exact", "reuse"):
            raise ConfigError(f"estimator_mode must be exact or reuse, got {self.estimator_mode!r}")
        positive = (
            "temperature dt_macro lambda_factor dt_micro_factor k_recon k_eval "
            "n_steps n_runs scale".split()
        )
        for key in positive:
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}")
        if self.n_carbons < 4:
            raise ConfigError(f"n_carbons must be at least 4, got {self.n_carbons}")
        if self.bin_width < 0:
            raise ConfigError(f"bin_width must be non-negative, got {self.bin_width}")
        if self.burn_in < 0:
            raise ConfigError(f"burn_in must be non-negative, got {self.burn_in}")
        return self

    # -- derived quantities ------------------------------------------------
    def build_system(self, n_carbons=None):
        n = self.n_carbons if n_carbons is None else n_carbons
        if self.system == "butane" and n_carbons is None:
            n = 4
        return model.alkane_system(n, temperature=self.temperature)

    @property
    def beta(self):
        return 1.0 / self.temperature

    def lam(self, system):
        return self.lambda_factor * system.params.k_b

    def resolved_bin_width(self, lam):
        return self.bin_width if self.bin_width > 0 else pseudomarginal.default_bin_width(lam)

    def chain_params(self, system, k_recon=None, k_eval=None):
        lam = self.lam(system)
        mu0 = (
            mcmc.exact_mu0_bar(system, self.beta)
            if self.mubar == "exact"
            else mcmc.uniform_mu0_bar
        )
        kr = self.k_recon if k_recon is None else k_recon
        ke = self.k_eval if k_eval is None else k_eval
        return mcmc.ChainParams(
            system=system,
            beta=self.beta,
            mu0_bar=mu0,
            macro=dynamics.MacroProposalParams(self.dt_macro),
            recon=dynamics.ReconstructionParams.with_defaults(
                lam, n_steps=kr, dt_factor=self.dt_micro_factor
            ),
            k_eval=ke,
            bin_width=self.resolved_bin_width(lam),
            estimator_mode=self.estimator_mode,
        )

    def scaled_steps(self):
        return max(1, int(round(self.n_steps / self.scale)))

    def scaled_runs(self, minimum=1):
        return max(minimum, int(round(self.n_runs / self.scale)))

    def int_list(self, key):
        raw = getattr(self, key)
        try:
            values = [int(tok) for tok in raw.split(",") if tok.strip()]
        except ValueError as exc:
            raise ConfigError(f"{key} must be comma-separated integers, got {raw!r}") from exc
        if not values or any(v <= 0 for v in values):
            raise ConfigError(f"{key} must hold positive integers, got {raw!r}")
        return values


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_KEY_ALIASES = {"mubar_choice": "mubar"}


def _coerce(key, raw):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return str(raw)
    except ValueError as exc:
        raise ConfigError(f"value for {key} is not numeric: {raw!r}") from exc


def parse_config(path=None, overrides=None) -> ExperimentConfig:
    """Read a flat key=value file, apply overrides, validate.

    Unknown keys and non-numeric values raise ConfigError naming the key.
    Keys are case-insensitive; lines starting with '#' are ignored. Keys not
    describing config fields (e.g. manifest extras) must be absent.
    """
    values = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"line {lineno} is not key=value: {line!r}")
                key, raw = line.split("=", 1)
                key = key.strip().lower()
                key = _KEY_ALIASES.get(key, key)
                if key.startswith("manifest.") or key == "experiment":
                    continue  # manifests are valid config files
                if key not in _FIELD_TYPES:
                    raise ConfigError(f"unknown config key {key!r} (line {lineno})")
                values[key] = _coerce(key, raw.strip())
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        key = _KEY_ALIASES.get(key.lower(), key.lower())
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, val)
    return ExperimentConfig(**values).validate()


def run_seed(master_seed, run_index):
    """Per-run generator: independent of worker count and of other runs."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(run_index,)))


# -- output helpers ---------------------------------------------------------


class OutputTracker:
    """Creates files in the output directory; removes them all on failure."""

    def __init__(self, output_dir):
        self.output_dir = output_dir
        self.created = []
        os.makedirs(output_dir, exist_ok=True)

    def open(self, name):
        return open(self.path(name), "w")

    def path(self, name):
        path = os.path.join(self.output_dir, name)
        self.created.append(path)
        return path

    def discard_all(self):
        for path in self.created:
            if os.path.exists(path):
                os.remove(path)


def write_manifest(tracker, experiment, cfg: ExperimentConfig, extras=None):
    system = cfg.build_system()
    lam = cfg.lam(system)
    with tracker.open("manifest.txt") as fh:
        fh.write(f"experiment={experiment}\n")
        for f in fields(ExperimentConfig):
            fh.write(f"{f.name}={getattr(cfg, f.name)}\n")
        fh.write(f"manifest.version={__version__}\n")
        fh.write(f"manifest.beta={cfg.beta!r}\n")
        fh.write(f"manifest.lambda={lam!r}\n")
        fh.write(f"manifest.dt_micro={cfg.dt_micro_factor / lam!r}\n")
        fh.write(f"manifest.bin_width_resolved={cfg.resolved_bin_width(lam)!r}\n")
        p = system.params
        fh.write(f"manifest.k_b={p.k_b!r}\n")
        fh.write(f"manifest.k_a={p.k_a!r}\n")
        fh.write(f"manifest.r0={p.r0!r}\n")
        fh.write(f"manifest.theta0={p.theta0!r}\n")
        for i, ci in enumerate(p.c):
            fh.write(f"manifest.c{i}={ci!r}\n")
        for key, val in (extras or {}).items():
            fh.write(f"manifest.{key}={val}\n")


def _reference_grid(n=401):
    return np.linspace(-math.pi, math.pi, n + 1)[1:]


def write_reference_densities(tracker, cfg: ExperimentConfig):
    """Normalized macro densities on a grid: the plain Boltzmann weight of the
    free energy and its Gaussian-filtered counterpart."""
    system = cfg.build_system()
    beta, lam = cfg.beta, cfg.lam(system)
    grid = _reference_grid()
    a_vals = system.free_energy(grid)
    mu0 = np.exp(-beta * a_vals)
    mu0 /= np.trapezoid(mu0, grid)
    mul = np.array(
        [analysis.quadrature_mu_lambda(z, system.free_energy, lam, beta) for z in grid]
    )
    mul /= np.trapezoid(mul, grid)
    with tracker.open("reference.csv") as fh:
        fh.write("z,mu0,mu_lambda\n")
        for z, a, b in zip(grid, mu0, mul):
            fh.write(f"{float(z)!r},{float(a)!r},{float(b)!r}\n")


# -- worker jobs (module level so they pickle) -------------------------------


def _micro_rate_job(args):
    cfg, n_carbons, k, run_index = args
    system = cfg.build_system(n_carbons)
    params = cfg.chain_params(system, k_recon=k, k_eval=k)
    rng = run_seed(cfg.seed, run_index)
    res = mcmc.run_chain(params, cfg.scaled_steps(), rng)
    return res.micro_rate


def _mm_functional_job(args):
    cfg, n_carbons, k, run_index = args
    system = cfg.build_system(n_carbons)
    params = cfg.chain_params(system, k_recon=k, k_eval=k)
    rng = run_seed(cfg.seed, run_index)
    res = mcmc.run_chain(params, cfg.scaled_steps(), rng)
    return float(res.xi_x.mean()), float((res.xi_x**2).mean()), res.elapsed


def _mala_functional_job(args):
    cfg, n_carbons, run_index = args
    system = cfg.build_system(n_carbons)
    lam = cfg.lam(system)
    rng = run_seed(cfg.seed, 10_000_000 + run_index)
    xi, acc, elapsed = dynamics.run_mala(
        system.initial_configuration(),
        system,
        cfg.dt_micro_factor / lam,
        cfg.beta,
        cfg.scaled_steps(),
        rng,
    )
    return float(xi.mean()), float((xi**2).mean()), elapsed, acc


def _kernel_pairs_job(args):
    cfg, run_index = args
    system = cfg.build_system()
    params = cfg.chain_params(system)
    rng = run_seed(cfg.seed, run_index)
    zs, qs = [], []

    def sink(z, log_mu):
        zs.append(z)
        qs.append(-log_mu / cfg.beta)

    mcmc.run_chain(params, cfg.scaled_steps(), rng, estimate_sink=sink)
    return np.asarray(zs), np.asarray(qs)


def _direct_variance_job(args):
    cfg, k, z, run_index = args
    system = cfg.build_system()
    lam = cfg.lam(system)
    beta = cfg.beta
    h = cfg.resolved_bin_width(lam)
    rng = run_seed(cfg.seed, run_index)
    x = system.initial_configuration()
    if cfg.burn_in:
        burn = dynamics.ReconstructionParams.with_defaults(
            lam, n_steps=cfg.burn_in, dt_factor=cfg.dt_micro_factor
        )
        x = dynamics.reconstruct(x, z, system, burn, beta, rng)[-1]
    recon = dynamics.ReconstructionParams.with_defaults(
        lam, n_steps=k, dt_factor=cfg.dt_micro_factor
    )
    samples = dynamics.reconstruct(x, z, system, recon, beta, rng)
    hist = pseudomarginal.TensorHistogram.from_samples(samples, h)
    log_mu = pseudomarginal.estimate_log_mu_lambda(z, hist, k, system, lam, beta, rng)
    return -log_mu / beta


def _pool_map(cfg, fn, jobs):
    workers = cfg.workers
    if workers <= 0:
        workers = os.cpu_count() or 1
    env_cap = os.environ.get("MMMCMC_THREADS")
    if env_cap:
        workers = min(workers, max(1, int(env_cap)))
    workers = min(workers, len(jobs))
    if workers <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


# -- experiments -------------------------------------------------------------


def exp_butane_hist(cfg, tracker):
    system = cfg.build_system()
    params = cfg.chain_params(system)
    rng = run_seed(cfg.seed, 0)
    res = mcmc.run_chain(params, cfg.scaled_steps(), rng)
    with tracker.open("chain.csv") as fh:
        res.write_csv(fh)
    model.save_configuration(tracker.path("final_configuration.csv"), res.final_state.x)
    write_reference_densities(tracker, cfg)
    return {
        "macro_rate": repr(res.macro_rate),
        "micro_rate": repr(res.micro_rate),
        "elapsed": f"{res.elapsed:.3f}",
    }


def exp_qlambda_scatter(cfg, tracker):
    system = cfg.build_system()
    params = cfg.chain_params(system)
    rng = run_seed(cfg.seed, 0)
    rows = []

    def sink(z, log_mu):
        rows.append((z, -log_mu / cfg.beta))

    res = mcmc.run_chain(params, cfg.scaled_steps(), rng, estimate_sink=sink)
    with tracker.open("qlambda.csv") as fh:
        fh.write("z,q_lambda\n")
        for z, q in rows:
            fh.write(f"{float(z)!r},{float(q)!r}\n")
    beta, lam = cfg.beta, cfg.lam(system)
    grid = _reference_grid()
    with tracker.open("reference_q.csv") as fh:
        fh.write("z,q_exact\n")
        for z in grid:
            q = -math.log(analysis.quadrature_mu_lambda(z, system.free_energy, lam, beta)) / beta
            fh.write(f"{float(z)!r},{float(q)!r}\n")
    return {"n_estimates": str(len(rows)), "micro_rate": repr(res.micro_rate)}


def _acceptance_sweep(cfg, tracker, cells, filename):
    n_runs = cfg.scaled_runs(minimum=2)
    rows = []
    for n_carbons, k in cells:
        jobs = [(cfg, n_carbons, k, r) for r in range(n_runs)]
        rates = np.array(_pool_map(cfg, _micro_rate_job, jobs))
        rows.append((n_carbons, k, rates.mean(), rates.std(ddof=1) / math.sqrt(n_runs)))
    with tracker.open(filename) as fh:
        fh.write("N,K,mean_micro_acc,stderr\n")
        for n, k, m, se in rows:
            fh.write(f"{n},{k},{float(m)!r},{float(se)!r}\n")
    return {"n_runs": str(n_runs), "cells": str(len(rows))}


def exp_acc_vs_n(cfg, tracker):
    k = cfg.k_recon
    cells = [(n, k) for n in cfg.int_list("n_list")]
    return _acceptance_sweep(cfg, tracker, cells, "acc_vs_n.csv")


def exp_acc_vs_k(cfg, tracker):
    k_list = cfg.int_list("k_list") if cfg.k_list else [10, 20, 40, 100]
    n_list = cfg.int_list("n_list") if cfg.n_list else [16]
    cells = [(n, k) for n in n_list for k in k_list]
    return _acceptance_sweep(cfg, tracker, cells, "acc_vs_k.csv")


def _parse_z_points(cfg):
    if cfg.z_points:
        try:
            return [float(tok) for tok in cfg.z_points.split(",") if tok.strip()]
        except ValueError as exc:
            raise ConfigError(f"z_points must be comma-separated reals, got {cfg.z_points!r}") from exc
    return list(np.linspace(-3.0, 3.0, 13))


def exp_var_vs_k(cfg, tracker):
    k_list = cfg.int_list("k_list") if cfg.k_list else [10, 20, 40, 100, 200]
    z_points = _parse_z_points(cfg)
    n_est = cfg.scaled_runs(minimum=2)
    with tracker.open("var_vs_k.csv") as fh:
        fh.write("K,z,variance\n")
        for k in k_list:
            for z in z_points:
                jobs = [(cfg, k, z, r) for r in range(n_est)]
                q = np.array(_pool_map(cfg, _direct_variance_job, jobs))
                fh.write(f"{k},{float(z)!r},{float(np.var(q, ddof=1))!r}\n")

    # kernel-smoothed moment curves from chain-recorded estimates
    n_chains = max(2, min(n_est, 20))
    results = _pool_map(cfg, _kernel_pairs_job, [(cfg, 5_000_000 + r) for r in range(n_chains)])
    kp = KernelParams()
    m_runs, s_runs = [], []
    for zs, qs in results:
        if zs.size == 0:
            continue
        m, s2, _ = analysis.kernel_mean_variance(zs, qs, kp)
        m_runs.append(m)
        s_runs.append(s2)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN grid points
        m_avg = np.nanmean(np.array(m_runs), axis=0)
        s_avg = np.nanmean(np.array(s_runs), axis=0)
    defined = np.isfinite(m_avg)
    with tracker.open("kernel.csv") as fh:
        analysis.write_kernel_csv(fh, kp.grid, m_avg, s_avg, defined)
    return {"n_estimates": str(n_est), "kernel_chains": str(n_chains)}


def exp_eff_gain(cfg, tracker):
    system = cfg.build_system()
    beta = cfg.beta
    truth_mean = analysis.quadrature_expectation(lambda z: z, system.free_energy, beta)
    truth_var = analysis.quadrature_expectation(lambda z: z * z, system.free_energy, beta)
    n_runs = cfg.scaled_runs(minimum=2)
    n = system.params.n_carbons

    mala_jobs = [(cfg, n, r) for r in range(n_runs)]
    mala = _pool_map(cfg, _mala_functional_job, mala_jobs)
    mala_mean = [m[0] for m in mala]
    mala_var = [m[1] for m in mala]
    t_mala = float(np.mean([m[2] for m in mala]))
    mse_mala = {
        "mean": analysis.mse(mala_mean, truth_mean),
        "variance": analysis.mse(mala_var, truth_var),
    }

    k_list = cfg.int_list("k_list") if cfg.k_list else [10, 20, 40]
    with tracker.open("eff_gain.csv") as fh:
        fh.write("N,K,functional,mse_mala,mse_mm,t_mala,t_mm,gain\n")
        for k in k_list:
            jobs = [(cfg, n, k, r) for r in range(n_runs)]
            mm = _pool_map(cfg, _mm_functional_job, jobs)
            t_mm = float(np.mean([m[2] for m in mm]))
            for name, truth, col in (
                ("mean", truth_mean, 0),
                ("variance", truth_var, 1),
            ):
                mse_mm = analysis.mse([m[col] for m in mm], truth)
                gain = analysis.efficiency_gain(mse_mala[name], mse_mm, t_mala, t_mm)
                fh.write(
                    f"{n},{k},{name},{mse_mala[name]!r},{mse_mm!r},"
                    f"{t_mala!r},{t_mm!r},{gain!r}\n"
                )
    return {"n_runs": str(n_runs), "mala_acceptance": repr(float(np.mean([m[3] for m in mala])))}


def exp_mala_baseline(cfg, tracker):
    system = cfg.build_system()
    lam = cfg.lam(system)
    rng = run_seed(cfg.seed, 0)
    xi, acc, elapsed = dynamics.run_mala(
        system.initial_configuration(),
        system,
        cfg.dt_micro_factor / lam,
        cfg.beta,
        cfg.scaled_steps(),
        rng,
    )
    with tracker.open("mala.csv") as fh:
        fh.write("step,xi_x\n")
        for i, v in enumerate(xi):
            fh.write(f"{i},{float(v)!r}\n")
    return {"acceptance": repr(acc), "elapsed": f"{elapsed:.3f}"}


_RUNNERS = {
    "butane-hist": exp_butane_hist,
    "qlambda-scatter": exp_qlambda_scatter,
    "acc-vs-n": exp_acc_vs_n,
    "acc-vs-k": exp_acc_vs_k,
    "var-vs-k": exp_var_vs_k,
    "eff-gain": exp_eff_gain,
    "mala-baseline": exp_mala_baseline,
}


def run_experiment(name, cfg: ExperimentConfig):
    """Run one experiment; returns 0 on success. Partial outputs are removed
    when the run fails."""
    if name not in _RUNNERS:
        raise ConfigError(f"unknown experiment {name!r}")
    cfg.validate()
    tracker = OutputTracker(cfg.output_dir)
    try:
        extras = _RUNNERS[name](cfg, tracker)
        write_manifest(tracker, name, cfg, extras)
    except Exception:
        tracker.discard_all()
        raise
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mmmcmc",
        description="Seeded micro-macro MCMC experiments writing CSV artifacts.",
    )
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", help="flat key=value config file")
    for f in fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, dest=f.name, default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {
        f.name: getattr(args, f.name) for f in fields(ExperimentConfig) if getattr(args, f.name) is not None
    }
    try:
        cfg = parse_config(args.config, overrides)
        t0 = time.perf_counter()
        status = run_experiment(args.experiment, cfg)
        print(f"{args.experiment}: artifacts in {cfg.output_dir} ({time.perf_counter() - t0:.1f}s)")
        return status
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure after config parsing
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
