import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmmcmc import model
from mmmcmc.model import (
    AlkaneParams,
    DegenerateGeometryError,
    QuadraticTestSystem,
    analytic_free_energy,
    chain_biased_drift,
    dihedral_angle,
    ideal_configuration,
    potential_energy,
    potential_gradient,
    potential_with_gradient,
    rc_gradient,
    rc_value,
    wrap_angle,
)

from conftest import apply_rigid_motion, perturbed_configs, random_rotation

BUTANE = AlkaneParams()


# -- wrapping ----------------------------------------------------------------


@given(st.floats(-50.0, 50.0))
def test_wrap_angle_range(z):
    w = wrap_angle(z)
    assert -math.pi < w <= math.pi


@given(st.floats(-6.0, 6.0))
def test_wrap_angle_periodic(z):
    assert wrap_angle(z + 2 * math.pi) == pytest.approx(wrap_angle(z), abs=1e-12)


def test_wrap_angle_boundary():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(math.pi - 0.01 + 0.02) == pytest.approx(-math.pi + 0.01)


# -- dihedral ----------------------------------------------------------------


def test_trans_zigzag_is_zero():
    x = ideal_configuration(BUTANE)
    assert abs(rc_value(x)) < 1e-14
    x10 = ideal_configuration(AlkaneParams(n_carbons=10))
    for i in range(7):
        assert abs(dihedral_angle(x10, (i, i + 1, i + 2, i + 3))) < 1e-14


def test_cis_is_half_turn():
    # planar C-shape: all four atoms on the same side
    r = np.array(
        [
            [1.0, 1.0, 0.0],
            [0.0, 0.5, 0.0],
            [0.0, -0.5, 0.0],
            [1.0, -1.0, 0.0],
        ]
    )
    assert abs(dihedral_angle(r.reshape(-1))) == pytest.approx(math.pi)


def test_dihedral_rigid_motion_invariance():
    rng = np.random.default_rng(1)
    for x in perturbed_configs(BUTANE, 5, seed=2):
        tau = rc_value(x)
        moved = apply_rigid_motion(x, random_rotation(rng), rng.standard_normal(3))
        assert abs(wrap_angle(rc_value(moved) - tau)) < 1e-12


def test_dihedral_degenerate_raises():
    r = np.zeros((4, 3))
    r[1, 0] = 1.0
    r[2, 0] = 2.0  # first three atoms collinear
    r[3] = (2.5, 1.0, 0.0)
    with pytest.raises(DegenerateGeometryError):
        dihedral_angle(r.reshape(-1))


def test_dihedral_duplicate_indices_rejected():
    x = ideal_configuration(BUTANE)
    with pytest.raises(ValueError):
        dihedral_angle(x, (0, 1, 2, 2))


# -- potential ---------------------------------------------------------------


def test_ideal_butane_energy_zero():
    assert potential_energy(BUTANE, ideal_configuration(BUTANE)) == pytest.approx(0.0, abs=1e-20)


def test_stretched_bond_energy():
    x = ideal_configuration(BUTANE).reshape(-1, 3)
    d = x[1] - x[0]
    x[0] = x[1] - d * (BUTANE.r0 + 0.1) / BUTANE.r0
    assert potential_energy(BUTANE, x.reshape(-1)) == pytest.approx(1596.125, rel=1e-12)


def test_potential_rigid_motion_invariance():
    rng = np.random.default_rng(3)
    for x in perturbed_configs(BUTANE, 5, seed=4):
        v = potential_energy(BUTANE, x)
        moved = apply_rigid_motion(x, random_rotation(rng), 10.0 * rng.standard_normal(3))
        assert v == pytest.approx(potential_energy(BUTANE, moved), rel=1e-10, abs=1e-10)


def test_energy_batch_matches_scalar():
    xs = perturbed_configs(AlkaneParams(n_carbons=6), 7, seed=5)
    batch = potential_energy(AlkaneParams(n_carbons=6), np.stack(xs))
    for xi, vi in zip(xs, batch):
        assert vi == pytest.approx(potential_energy(AlkaneParams(n_carbons=6), xi), rel=1e-14)


def test_gradient_zero_at_minimum():
    g = potential_gradient(BUTANE, ideal_configuration(BUTANE))
    assert np.linalg.norm(g) < 1e-8


def _fd_gradient(f, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.mark.parametrize("n_carbons", [4, 8])
def test_gradient_matches_finite_differences(n_carbons):
    p = AlkaneParams(n_carbons=n_carbons)
    for x in perturbed_configs(p, 5, seed=6 + n_carbons):
        g = potential_gradient(p, x)
        fd = _fd_gradient(lambda y: potential_energy(p, y), x)
        assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-5


def test_net_force_vanishes():
    for x in perturbed_configs(AlkaneParams(n_carbons=7), 4, seed=9):
        g = potential_gradient(AlkaneParams(n_carbons=7), x).reshape(-1, 3)
        assert np.max(np.abs(g.sum(axis=0))) < 1e-10


# -- reaction coordinate -----------------------------------------------------


def test_rc_gradient_matches_finite_differences():
    for x in perturbed_configs(BUTANE, 5, seed=11):
        g = rc_gradient(x)
        fd = _fd_gradient(lambda y: wrap_angle(rc_value(y) - rc_value(x)) + rc_value(x), x)
        assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-5


def test_rc_gradient_local_to_first_four_atoms():
    p = AlkaneParams(n_carbons=10)
    for x in perturbed_configs(p, 3, seed=12):
        g = rc_gradient(x)
        assert np.all(g[12:] == 0.0)
        assert np.any(g[:12] != 0.0)


# -- free energy -------------------------------------------------------------


def test_free_energy_values():
    assert analytic_free_energy(BUTANE, 0.0) == pytest.approx(0.0, abs=1e-10)
    assert analytic_free_energy(BUTANE, math.pi) == pytest.approx(2379.76, rel=1e-12)


@given(st.floats(-math.pi, math.pi))
def test_free_energy_even_and_periodic(z):
    a = analytic_free_energy(BUTANE, z)
    assert analytic_free_energy(BUTANE, -z) == pytest.approx(a, rel=1e-12, abs=1e-9)
    assert analytic_free_energy(BUTANE, z + 2 * math.pi) == pytest.approx(a, rel=1e-12, abs=1e-9)


def test_potential_minus_backbone_terms_is_free_energy():
    # zeroing the torsion coefficients isolates the bond/angle part; the
    # remainder at any configuration is exactly the free-energy polynomial
    backbone = AlkaneParams(c=(0.0, 0.0, 0.0, 0.0))
    for x in perturbed_configs(BUTANE, 6, seed=55):
        diff = potential_energy(BUTANE, x) - potential_energy(backbone, x)
        assert diff == pytest.approx(
            analytic_free_energy(BUTANE, rc_value(x)), rel=1e-12, abs=1e-9
        )


def test_single_torsion_energy_equals_free_energy():
    # rotate the last atom about the middle bond: bonds and angles stay ideal,
    # so the whole potential reduces to the torsion term
    x = ideal_configuration(BUTANE).reshape(-1, 3)
    axis = (x[2] - x[1]) / np.linalg.norm(x[2] - x[1])
    for phi in (0.3, 1.2, 2.6, -2.0):
        c, s = math.cos(phi), math.sin(phi)
        v = x[3] - x[2]
        rotated = (
            v * c + np.cross(axis, v) * s + axis * np.dot(axis, v) * (1 - c)
        )
        y = x.copy()
        y[3] = x[2] + rotated
        flat = y.reshape(-1)
        assert potential_energy(BUTANE, flat) == pytest.approx(
            analytic_free_energy(BUTANE, rc_value(flat)), rel=1e-9, abs=1e-9
        )


# -- ideal configuration -----------------------------------------------------


def test_ideal_configuration_geometry():
    p = AlkaneParams(n_carbons=6)
    r = ideal_configuration(p).reshape(-1, 3)
    d = r[1:] - r[:-1]
    lens = np.linalg.norm(d, axis=1)
    assert np.allclose(lens, p.r0, atol=1e-12)
    for i in range(1, 5):
        u = r[i - 1] - r[i]
        v = r[i + 1] - r[i]
        cos_th = u @ v / (np.linalg.norm(u) * np.linalg.norm(v))
        assert math.acos(cos_th) == pytest.approx(p.theta0, abs=1e-12)


# -- fused fast paths --------------------------------------------------------


def test_fused_energy_gradient_matches_reference():
    for n in (4, 8):
        p = AlkaneParams(n_carbons=n)
        for x in perturbed_configs(p, 4, seed=20 + n):
            v, g = potential_with_gradient(p, x)
            assert v == pytest.approx(potential_energy(p, x), rel=1e-12, abs=1e-9)
            assert np.allclose(g, potential_gradient(p, x), rtol=1e-10, atol=1e-9)


def test_fused_drift_matches_composition():
    p = AlkaneParams()
    lam = 2.0 * p.k_b
    rng = np.random.default_rng(30)
    for x in perturbed_configs(p, 4, seed=31):
        zp = rng.uniform(-math.pi, math.pi)
        ref = potential_gradient(p, x) + lam * wrap_angle(rc_value(x) - zp) * rc_gradient(x)
        assert np.allclose(chain_biased_drift(p, x, zp, lam), ref, rtol=1e-9, atol=1e-7)


def test_system_fast_paths_match_reference(butane):
    p = butane.params
    for x in perturbed_configs(p, 3, seed=33):
        v, g = butane.potential_and_gradient(x)
        assert v == pytest.approx(potential_energy(p, x), rel=1e-11, abs=1e-9)
        assert np.allclose(g, potential_gradient(p, x), rtol=1e-9, atol=1e-9)
    noise = 1e-3 * np.random.default_rng(34).standard_normal((8, p.n_dof))
    out, bad = butane.run_biased_steps(ideal_configuration(p), 0.3, 2 * p.k_b, 1e-8, noise)
    assert bad == -1 and out.shape == (8, p.n_dof)
    x, ref = ideal_configuration(p), np.empty_like(out)
    for k in range(8):
        x = x - 1e-8 * chain_biased_drift(p, x, 0.3, 2 * p.k_b) + noise[k]
        ref[k] = x
    assert np.allclose(out, ref, rtol=1e-9, atol=1e-12)


# -- params and validation ---------------------------------------------------


def test_params_defaults_and_validation():
    p = AlkaneParams()
    assert (p.k_b, p.k_a, p.r0) == (319225.0, 62500.0, 1.540)
    assert p.theta0 == pytest.approx(math.radians(114.0))
    assert p.c == (1031.36, 2037.82, 158.52, -3227.70)
    assert p.beta == pytest.approx(1.0 / 300.0)
    with pytest.raises(ValueError):
        AlkaneParams(n_carbons=3)
    with pytest.raises(ValueError):
        AlkaneParams(temperature=0.0)


def test_validate_configuration():
    x = ideal_configuration(BUTANE)
    model.validate_configuration(x, 4)
    with pytest.raises(ValueError):
        model.validate_configuration(x[:-1], 4)
    bad = x.copy()
    bad[0] = math.nan
    with pytest.raises(ValueError):
        model.validate_configuration(bad, 4)


def test_configuration_csv_round_trip(tmp_path):
    x = perturbed_configs(BUTANE, 1, seed=40)[0]
    path = tmp_path / "config.csv"
    model.save_configuration(path, x)
    header = path.read_text().splitlines()[0]
    assert header.startswith("x0,y0,z0,x1")
    assert np.array_equal(model.load_configuration(path), x)


# -- quadratic test system ---------------------------------------------------


def test_quadratic_toy_basics(toy_1d):
    assert toy_1d.potential(np.array([2.0])) == pytest.approx(10.0)
    assert toy_1d.gradient(np.array([2.0])) == pytest.approx([10.0])
    assert toy_1d.rc(np.array([0.7])) == pytest.approx(0.7)
    assert toy_1d.free_energy(2.0) == pytest.approx(10.0)
    assert toy_1d.rc_diff(5.0, 1.0) == pytest.approx(4.0)  # no wrapping on the line
    toy3 = QuadraticTestSystem(kappa=2.0, dim=3)
    x = np.array([1.0, 2.0, 3.0])
    assert toy3.potential(x) == pytest.approx(14.0)
    assert toy3.rc(x) == pytest.approx(1.0)
    assert np.array_equal(toy3.rc_gradient(x), [1.0, 0.0, 0.0])
