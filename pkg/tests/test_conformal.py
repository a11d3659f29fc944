import math

import numpy as np
import pytest

from lawson_lab.errors import ConvergenceError, DomainError
from lawson_lab.services.conformal import (
    MobiusMap,
    SurfaceSample,
    balance,
    center_of_mass,
    conformal_volume_estimate,
    mass_matrix,
    mobius_apply,
    mobius_area,
    mobius_surface,
)
from lawson_lab.services.numerics import elliptic_E
from lawson_lab.services.surfaces import clifford_torus, equatorial_sphere

KLEIN_AREA = 6 * math.pi * elliptic_E(2 * math.sqrt(2) / 3)
CLIFFORD_AREA = 2 * math.pi ** 2


def _sphere_points(dim=4, count=200, seed=0):
    z = np.random.default_rng(seed).standard_normal((count, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _rotation(dim=4, seed=0):
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((dim, dim)))
    return q


# ── Möbius maps ───────────────────────────────────────────────────────────────

def test_mobius_keeps_points_on_sphere():
    gamma = MobiusMap(3, np.array([0.3, -0.2, 0.1, 0.4]), _rotation())
    p = mobius_apply(gamma, _sphere_points())
    assert np.abs(np.linalg.norm(p, axis=1) - 1).max() <= 1e-14


def test_mobius_sends_basepoint_direction_to_itself():
    a = np.array([0.0, 0.0, 0.0, 0.6])
    gamma = MobiusMap(3, a)
    assert np.allclose(gamma(np.array([0.0, 0.0, 0.0, 1.0])), [0, 0, 0, 1], atol=1e-15)
    assert np.allclose(gamma(np.array([0.0, 0.0, 0.0, -1.0])), [0, 0, 0, -1], atol=1e-15)


def test_mobius_inverse_round_trip():
    gamma = MobiusMap(3, np.array([0.5, 0.1, -0.3, 0.2]), _rotation(seed=2))
    p = _sphere_points(seed=1)
    assert np.abs(gamma.inverse()(gamma(p)) - p).max() <= 1e-12


def test_opposite_translations_cancel():
    a = np.array([0.2, -0.4, 0.1, 0.3])
    composed = MobiusMap(3, a).compose(MobiusMap(3, -a))
    assert np.abs(composed.a).max() <= 1e-12
    assert np.abs(composed.rotation - np.eye(4)).max() <= 1e-12


def test_compose_matches_sequential_application():
    g1 = MobiusMap(3, np.array([0.3, 0.0, 0.2, -0.1]), _rotation(seed=4))
    g2 = MobiusMap(3, np.array([-0.1, 0.5, 0.0, 0.2]))
    p = _sphere_points(seed=5)
    assert np.abs(g1.compose(g2)(p) - g1(g2(p))).max() <= 1e-11


def test_mobius_rejects_boundary_parameter():
    with pytest.raises(DomainError):
        MobiusMap(3, np.array([1.0, 0.0, 0.0, 0.0]))
    with pytest.raises(DomainError):
        MobiusMap(3, np.zeros(4), rotation=2 * np.eye(4))
    with pytest.raises(DomainError):
        MobiusMap(3, np.zeros(3))


def test_compose_rejects_dimension_mismatch():
    with pytest.raises(DomainError):
        MobiusMap.identity(3).compose(MobiusMap.identity(2))


def test_jacobian_scales_tangents_by_factor():
    gamma = MobiusMap(3, np.array([0.4, -0.3, 0.2, 0.1]), _rotation(seed=6))
    p = _sphere_points(count=20, seed=7)
    v = np.random.default_rng(8).standard_normal((20, 4))
    v -= np.sum(v * p, axis=1, keepdims=True) * p
    Jv = np.einsum("kij,kj->ki", gamma.jacobian(p), v)
    ratio = np.linalg.norm(Jv, axis=1) / np.linalg.norm(v, axis=1)
    assert np.abs(ratio - gamma.factor(p)).max() <= 1e-12


# ── Areas and centers ─────────────────────────────────────────────────────────

def test_great_sphere_area_is_invariant_in_plane():
    f = equatorial_sphere()
    assert mobius_area(f, MobiusMap(3, np.array([0.3, 0.2, 0.0, 0.0])), 64) == pytest.approx(4 * math.pi, rel=1e-8)


def test_great_sphere_shrinks_off_plane():
    f = equatorial_sphere()
    assert mobius_area(f, MobiusMap(3, np.array([0.0, 0.0, 0.0, 0.5])), 64) < 4 * math.pi - 0.1


def test_pushed_area_matches_mobius_surface():
    f = clifford_torus()
    gamma = MobiusMap(3, np.array([0.2, 0.1, -0.3, 0.1]))
    moved = SurfaceSample.of(mobius_surface(f, gamma), 128).area
    assert moved == pytest.approx(mobius_area(f, gamma, 128), rel=1e-8)


def test_lawson_surfaces_are_centered(tau31):
    assert np.abs(center_of_mass(tau31, 64)).max() <= 1e-12


def test_center_moves_toward_parameter():
    gamma = MobiusMap(3, np.array([0.4, 0.0, 0.0, 0.0]))
    c = center_of_mass(equatorial_sphere(), 64, gamma)
    assert c[0] > 0.1
    assert np.abs(c[1:]).max() <= 1e-10


def test_center_of_zero_area_raises():
    empty = SurfaceSample(points=np.array([[0.0, 0.0, 1.0]]), weights=np.array([0.0]))
    with pytest.raises(ConvergenceError):
        center_of_mass(empty)


# ── Balancing ─────────────────────────────────────────────────────────────────

def test_balanced_surface_needs_no_correction():
    result = balance(clifford_torus(), 64)
    assert result.mobius.is_identity
    assert result.trace == [result.center_norm]


def test_balance_recenters_pushed_sphere():
    # φ_{a0} lifts the great sphere to the latitude x₄ = 2·0.3/1.09
    a0 = np.array([0.0, 0.0, 0.0, 0.3])
    moved = SurfaceSample.of(mobius_surface(equatorial_sphere(), MobiusMap(3, a0)), 64)
    result = balance(moved)
    assert result.trace[0] == pytest.approx(0.6 / 1.09, rel=1e-8)
    assert result.center_norm <= 1e-9
    assert np.abs(result.a[:3]).max() <= 1e-8
    assert result.a[3] < 0
    direct = (moved.weights @ result.mobius(moved.points)) / moved.area
    assert np.linalg.norm(direct) <= 1e-9


def test_balance_recenters_pushed_clifford_torus():
    moved = mobius_surface(clifford_torus(), MobiusMap(3, np.array([0.3, 0.0, 0.0, 0.0])))
    result = balance(moved, 64)
    assert result.center_norm <= 1e-9
    assert np.linalg.norm(center_of_mass(moved, 64, result.mobius)) <= 1e-9


def test_balance_zero_area_raises():
    empty = SurfaceSample(points=np.array([[0.0, 0.0, 1.0]]), weights=np.array([0.0]))
    with pytest.raises(ConvergenceError):
        balance(empty)


# ── Conformal volume ──────────────────────────────────────────────────────────

def test_clifford_conformal_volume_attained_at_identity():
    estimate = conformal_volume_estimate(clifford_torus(), 64, sample_budget=100, seed=1)
    assert estimate.sup_area == pytest.approx(CLIFFORD_AREA, rel=1e-9)
    assert estimate.max_excess <= 1e-9
    assert estimate.profile[0] == (0.0, estimate.base_area)
    assert len(estimate.profile) > 100


def test_conformal_volume_rejects_small_budget():
    with pytest.raises(DomainError):
        conformal_volume_estimate(clifford_torus(), 64, sample_budget=50)


# ── Mass matrix ───────────────────────────────────────────────────────────────

def test_clifford_mass_matrix_is_isotropic():
    mass = mass_matrix(clifford_torus(), 64)
    assert mass.nontrivial_count == 4
    assert np.allclose(mass.eigenvalues, CLIFFORD_AREA / 4, rtol=1e-10)
    assert mass.trace == pytest.approx(CLIFFORD_AREA, rel=1e-12)


def test_bipolar31_mass_matrix_spans_five_directions(bipolar31_full):
    mass = mass_matrix(bipolar31_full, 128)
    assert mass.entries.shape == (6, 6)
    assert mass.nontrivial_count == 5
    assert mass.trace == pytest.approx(KLEIN_AREA, rel=1e-9)
    assert mass.gap(5) >= 1e6
    assert math.isinf(mass.gap(6))
