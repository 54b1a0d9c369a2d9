import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmmcmc import model
from mmmcmc.analysis import (
    KernelParams,
    QuadratureError,
    bin_masses,
    efficiency_gain,
    kernel_mean_variance,
    mse,
    quadrature_expectation,
    quadrature_mu_lambda,
    tv_distance_hist,
    write_kernel_csv,
)

BUTANE = model.AlkaneParams()
A_BUTANE = lambda z: model.analytic_free_energy(BUTANE, z)
BETA = BUTANE.beta
LAM = 2.0 * BUTANE.k_b

# frozen output of quadrature_expectation(z^2) for butane at 300 K; this oracle
# is the source of truth for the value, pinned here against regressions
EZ2_BUTANE_300K = 1.350466296425994


# -- filtered-density quadrature -------------------------------------------------


def test_constant_free_energy_gives_flat_density():
    v1 = quadrature_mu_lambda(0.3, lambda z: 5.0, LAM, BETA)
    v2 = quadrature_mu_lambda(-2.0, lambda z: 5.0, LAM, BETA)
    assert v1 == pytest.approx(v2, rel=1e-8)


def test_sharp_coupling_recovers_boltzmann_weight():
    lam_big = 1e6 * BUTANE.k_b
    for z in (0.0, 1.1, -2.2):
        got = quadrature_mu_lambda(z, A_BUTANE, lam_big, BETA)
        assert got == pytest.approx(math.exp(-BETA * A_BUTANE(z)), rel=1e-3)


def test_parity_in_z():
    for z in (0.4, 1.3, 2.8):
        a = quadrature_mu_lambda(z, A_BUTANE, LAM, BETA)
        b = quadrature_mu_lambda(-z, A_BUTANE, LAM, BETA)
        assert a == pytest.approx(b, rel=1e-8)


def test_periodic_wrapping_across_seam():
    # values just either side of the +/-pi seam must agree
    a = quadrature_mu_lambda(math.pi - 1e-3, A_BUTANE, LAM, BETA)
    b = quadrature_mu_lambda(-math.pi + 1e-3, A_BUTANE, LAM, BETA)
    assert a == pytest.approx(b, rel=1e-6)


def test_line_domain_matches_closed_form():
    kappa, lam, beta = 5.0, 20.0, 1.0
    for z in (0.0, 0.55, -1.2):
        closed = math.sqrt(lam / (lam + kappa)) * math.exp(
            -beta * lam * kappa / (lam + kappa) * z * z / 2
        )
        got = quadrature_mu_lambda(z, lambda u: 0.5 * kappa * u * u, lam, beta, periodic=False)
        assert got == pytest.approx(closed, rel=1e-8)


def test_invalid_lambda_rejected():
    with pytest.raises(ValueError):
        quadrature_mu_lambda(0.0, A_BUTANE, 0.0, BETA)


# -- expectations ------------------------------------------------------------------


def test_expectation_of_one():
    assert quadrature_expectation(lambda z: 1.0, A_BUTANE, BETA) == pytest.approx(1.0, rel=1e-10)


def test_expectation_odd_function_vanishes():
    assert quadrature_expectation(lambda z: z, A_BUTANE, BETA) == pytest.approx(0.0, abs=1e-8)


def test_expectation_z_squared_frozen():
    got = quadrature_expectation(lambda z: z * z, A_BUTANE, BETA)
    assert got == pytest.approx(EZ2_BUTANE_300K, rel=1e-8)


def test_quadrature_error_on_singular_integrand():
    with pytest.raises(QuadratureError):
        quadrature_expectation(lambda z: 1.0 / (z - 0.1234567), A_BUTANE, BETA)


# -- mse and gain ---------------------------------------------------------------------


def test_mse_examples():
    assert mse([3.0, 3.0, 3.0], 3.0) == 0.0
    assert mse([4.0, 2.0], 3.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        mse([], 1.0)


def test_mse_translation_consistent_exact():
    x = np.array([1.0, 4.0, -2.0, 7.0])
    assert mse(x + 128.0, 3.0 + 128.0) == mse(x, 3.0)


@given(
    st.lists(st.floats(-10, 10), min_size=1, max_size=8),
    st.floats(-5, 5),
    st.floats(-50, 50),
)
@settings(max_examples=50)
def test_mse_translation_consistent_float(xs, truth, c):
    a = mse(np.array(xs) + c, truth + c)
    b = mse(np.array(xs), truth)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


def test_efficiency_gain_examples():
    assert efficiency_gain(1.0, 1.0, 1.0, 1.0) == pytest.approx(1.0)
    assert efficiency_gain(4.0, 1.0, 1.0, 2.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        efficiency_gain(0.0, 1.0, 1.0, 1.0)
    with pytest.warns(UserWarning):
        assert efficiency_gain(1.0, 0.0, 1.0, 1.0) == math.inf


# -- kernel smoothing --------------------------------------------------------------------


def test_kernel_constant_values():
    rng = np.random.default_rng(0)
    z = rng.uniform(-3, 3, 400)
    q = np.full(400, 7.5)
    kp = KernelParams(epsilon=0.05, grid=np.linspace(-2.5, 2.5, 21))
    m, s2, defined = kernel_mean_variance(z, q, kp)
    assert np.all(defined)
    np.testing.assert_allclose(m, 7.5, rtol=1e-12)
    np.testing.assert_allclose(s2, 0.0, atol=1e-18)


def test_kernel_single_pair():
    kp = KernelParams(epsilon=0.1, grid=np.linspace(-0.5, 0.5, 11))
    m, s2, defined = kernel_mean_variance(np.array([0.0]), np.array([3.3]), kp)
    assert np.all(m[defined] == pytest.approx(3.3))
    assert np.all(s2[defined] == pytest.approx(0.0))


def test_kernel_undefined_far_from_data():
    kp = KernelParams(epsilon=0.02, grid=np.array([0.0, 3.0]))
    m, s2, defined = kernel_mean_variance(np.array([0.0]), np.array([1.0]), kp)
    assert defined[0] and not defined[1]
    assert math.isnan(m[1]) and math.isnan(s2[1])


def test_kernel_permutation_invariance():
    rng = np.random.default_rng(5)
    z = rng.uniform(-3, 3, 300)
    q = rng.normal(size=300)
    kp = KernelParams(epsilon=0.1, grid=np.linspace(-2, 2, 9))
    m1, s1, d1 = kernel_mean_variance(z, q, kp)
    perm = rng.permutation(300)
    m2, s2, d2 = kernel_mean_variance(z[perm], q[perm], kp)
    assert np.array_equal(d1, d2)
    np.testing.assert_allclose(m1[d1], m2[d2], rtol=1e-12)
    np.testing.assert_allclose(s1[d1], s2[d2], rtol=1e-9, atol=1e-12)


def test_kernel_tracks_free_energy_on_synthetic_data():
    rng = np.random.default_rng(9)
    z = rng.uniform(-math.pi, math.pi, 10_000)
    q = model.analytic_free_energy(BUTANE, z) + rng.normal(0.0, 10.0, z.size)
    kp = KernelParams(epsilon=0.02, grid=np.linspace(-2.5, 2.5, 41))
    m, _, defined = kernel_mean_variance(z, q, kp)
    assert np.all(defined)
    ref = model.analytic_free_energy(BUTANE, kp.grid)
    assert np.max(np.abs(m - ref)) < 50.0


def test_kernel_circular_distance_at_seam():
    # points hugging +pi and -pi are neighbours on the circle
    z = np.array([math.pi - 0.005, -math.pi + 0.005])
    q = np.array([10.0, 20.0])
    kp = KernelParams(epsilon=0.02, grid=np.array([math.pi]))
    m, _, defined = kernel_mean_variance(z, q, kp)
    assert defined[0] and m[0] == pytest.approx(15.0, abs=0.5)


def test_kernel_unnormalized_variant_runs():
    rng = np.random.default_rng(1)
    z = rng.uniform(-1, 1, 500)
    q = rng.normal(size=500)
    kp = KernelParams(epsilon=0.1, grid=np.linspace(-0.5, 0.5, 5))
    m, s2, defined = kernel_mean_variance(z, q, kp, normalized=False)
    assert np.all(np.isfinite(m[defined])) and np.all(np.isfinite(s2[defined]))


def test_kernel_params_validation():
    with pytest.raises(ValueError):
        KernelParams(epsilon=0.0)
    assert KernelParams().epsilon == 0.02


def test_kernel_csv_schema():
    buf = io.StringIO()
    write_kernel_csv(buf, np.array([0.1]), np.array([1.0]), np.array([2.0]), np.array([True]))
    lines = buf.getvalue().splitlines()
    assert lines[0] == "z,m,sigma2,defined"
    assert lines[1] == "0.1,1.0,2.0,1"


# -- binned TV distance ---------------------------------------------------------------


def test_bin_masses_normalized():
    masses = bin_masses(lambda u: math.exp(-u * u), np.linspace(-3, 3, 13))
    assert masses.sum() == pytest.approx(1.0, rel=1e-10)


def test_tv_distance_of_matching_samples_is_small():
    rng = np.random.default_rng(3)
    samples = rng.normal(0.0, 1.0, 200_000)
    dens = lambda u: math.exp(-u * u / 2)
    edges = np.linspace(-4, 4, 41)
    assert tv_distance_hist(samples, dens, edges) < 0.01


def test_tv_distance_detects_mismatch():
    rng = np.random.default_rng(4)
    samples = rng.normal(1.5, 1.0, 50_000)
    dens = lambda u: math.exp(-u * u / 2)
    edges = np.linspace(-4, 4, 41)
    assert tv_distance_hist(samples, dens, edges) > 0.4
