import math
from dataclasses import replace

import numpy as np
import pytest

from lawson_lab.errors import AmbiguousRankError, DegenerateGeometryError, DomainError
from lawson_lab.services.surfaces import (
    DeckMap,
    FundamentalDomain,
    ParamSurface,
    Similarity,
    SphereInversion,
    StereographicChart,
    bipolar,
    compose,
    detect_deck_maps,
    detect_domain,
    flat_torus,
    gauss_map_s3,
    lawson_bipolar,
    lawson_tau,
    reduce_affine_span,
    round_sphere,
    stereographic,
    surface_by_name,
)

TWO_PI = 2 * math.pi


def _random_points(count=100, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, TWO_PI, count), rng.uniform(0, math.pi, count)


def _torus_domain():
    return FundamentalDomain((0.0, TWO_PI), (0.0, TWO_PI), ((TWO_PI, 0.0), (0.0, TWO_PI)))


def _circle_in_r5(eps=0.0):
    def point(x, y):
        x = np.asarray(x, dtype=float)
        zero = 0.0 * x
        return np.stack([np.cos(x), np.sin(x), eps * np.cos(2 * x), zero, zero], axis=-1)

    return ParamSurface(name="circle", ambient_dim=5, point_fn=point, domain=_torus_domain())


# ── Domains ───────────────────────────────────────────────────────────────────

def test_domain_rejects_dependent_lattice():
    with pytest.raises(DomainError):
        FundamentalDomain((0, 1), (0, 1), ((1.0, 1.0), (2.0, 2.0)))


def test_domain_rejects_non_involution():
    with pytest.raises(DomainError):
        FundamentalDomain((0, TWO_PI), (0, TWO_PI), ((TWO_PI, 0.0), (0.0, TWO_PI)), (DeckMap(1.0, 0.0, -1),))


def test_klein_domain_has_two_sheets():
    dom = lawson_tau(2, 1).domain
    assert dom.is_klein
    assert dom.sheets == 2
    assert dom.klein_involution == DeckMap(math.pi, 0.0, -1)


# ── Lawson family ─────────────────────────────────────────────────────────────

def test_lawson_base_point(tau31):
    assert np.allclose(tau31.eval(0.0, 0.0), [1, 0, 0, 0], atol=1e-15)


@pytest.mark.parametrize("m,k", [(1, 1), (3, 1), (2, 1), (5, 3), (4, 3)])
def test_lawson_unit_norm(m, k):
    x, y = _random_points(seed=m * 10 + k)
    assert np.abs(np.linalg.norm(lawson_tau(m, k).eval(x, y), axis=-1) - 1).max() <= 1e-12


def test_lawson_rejects_common_factor():
    with pytest.raises(DomainError):
        lawson_tau(2, 2)


def test_lawson_torus_lattice():
    dom = lawson_tau(3, 1).domain
    assert not dom.is_klein
    assert dom.lattice == ((math.pi, math.pi), (math.pi, -math.pi))


@pytest.mark.parametrize("m,k", [(3, 1), (2, 1)])
def test_lawson_analytic_partials_match_differences(m, k):
    f = lawson_tau(m, k)
    fd = replace(f, d1_fn=None, d2_fn=None)
    x, y = _random_points(seed=7)
    for exact, approx in zip(f.d1(x, y), fd.d1(x, y)):
        assert np.abs(exact - approx).max() <= 1e-7
    for exact, approx in zip(f.d2(x, y), fd.d2(x, y)):
        assert np.abs(exact - approx).max() <= 1e-5


def test_lawson_respects_deck_maps():
    f = lawson_tau(2, 1)
    for sigma in f.domain.deck_maps:
        assert f.deck_defect(sigma) <= 1e-10


# ── Gauss map / bipolar ───────────────────────────────────────────────────────

def test_gauss_map_is_unit_normal(tau31):
    psi_star = gauss_map_s3(tau31)
    x, y = _random_points(seed=3)
    n = psi_star.eval(x, y)
    p = tau31.eval(x, y)
    px, py = tau31.d1(x, y)
    assert np.abs(np.linalg.norm(n, axis=-1) - 1).max() <= 1e-12
    for v in (p, px, py):
        assert np.abs(np.sum(n * v, axis=-1)).max() <= 1e-11


def test_gauss_map_orientation_positive(tau31):
    psi_star = gauss_map_s3(tau31)
    x, y = 0.4, 0.3
    frame = np.stack([tau31.eval(x, y), *tau31.d1(x, y), psi_star.eval(x, y)])
    assert np.linalg.det(frame) > 0


def test_gauss_map_clifford_null_space():
    f = lawson_tau(1, 1)
    n = gauss_map_s3(f).eval(0.0, 0.0)
    M = np.stack([f.eval(0.0, 0.0), *f.d1(0.0, 0.0)])
    _, _, Vt = np.linalg.svd(M)
    assert abs(abs(n @ Vt[-1]) - 1) <= 1e-12


def test_bipolar_unit_norm(tau31):
    f = bipolar(tau31, detect=False)
    assert f.ambient_dim == 6
    x, y = _random_points(seed=11)
    assert np.abs(np.linalg.norm(f.eval(x, y), axis=-1) - 1).max() <= 1e-11


# ── Span reduction ────────────────────────────────────────────────────────────

def test_reduce_planar_circle():
    reduced = reduce_affine_span(_circle_in_r5())
    assert reduced.metadata["span_rank"] == 2
    assert reduced.ambient_dim == 2


def test_reduce_rejects_small_sample():
    with pytest.raises(DomainError):
        reduce_affine_span(_circle_in_r5(), sample_count=10)


def test_reduce_flags_ambiguous_rank():
    with pytest.raises(AmbiguousRankError) as info:
        reduce_affine_span(_circle_in_r5(eps=1e-9))
    assert len(info.value.singular_values) == 5


def test_bipolar31_lies_in_s4(bipolar31):
    assert bipolar31.metadata["span_rank"] == 5
    assert bipolar31.ambient_dim == 5
    assert bipolar31.metadata["singular_gap"] >= 1e6
    _, _, P = bipolar31.sample(32, 32)
    assert np.abs(np.linalg.norm(P, axis=-1) - 1).max() <= 1e-10


@pytest.mark.parametrize("m,k,rank", [(1, 1, 4), (2, 1, 5), (5, 3, 5)])
def test_rank_dichotomy(m, k, rank):
    reduced = reduce_affine_span(bipolar(lawson_tau(m, k), detect=False))
    assert reduced.metadata["span_rank"] == rank


# ── Deck maps ─────────────────────────────────────────────────────────────────

def test_detect_tau21_reflection():
    found = detect_deck_maps(lawson_tau(2, 1))
    assert DeckMap(math.pi, 0.0, -1) in found


def test_detect_nothing_on_generic_flat_torus():
    assert detect_deck_maps(flat_torus(1.0, 0.5)) == []


def test_detect_rejects_empty_family():
    with pytest.raises(DomainError):
        detect_deck_maps(lawson_tau(2, 1), candidates=[])


def test_bipolar31_is_klein_bottle(bipolar31):
    dom = bipolar31.domain
    assert dom.is_klein
    assert len([d for d in dom.deck_maps if d.orientation_reversing]) == 1
    assert bipolar31.deck_defect(dom.klein_involution) <= 1e-9


def test_bipolar11_is_torus():
    f = lawson_bipolar(1, 1)
    assert not f.domain.is_klein


def test_detect_domain_keeps_clifford_lattice_area():
    dom = detect_domain(lawson_tau(1, 1))
    assert abs(np.linalg.det(np.asarray(dom.lattice))) <= 2 * math.pi ** 2 + 1e-9


# ── Point maps ────────────────────────────────────────────────────────────────

def test_stereographic_equator_and_antipode():
    chart = StereographicChart.standard(3)
    assert np.allclose(stereographic(chart, np.array([1.0, 0, 0, 0])), [1, 0, 0])
    assert np.allclose(stereographic(chart, np.array([0, 0, 0, -1.0])), [0, 0, 0], atol=1e-15)


def test_stereographic_round_trip():
    rng = np.random.default_rng(4)
    chart = StereographicChart(n=4, pole=np.array([0.6, 0, 0.8, 0, 0]))
    z = rng.standard_normal((1000, 4))
    assert np.abs(chart.forward(chart.inverse(z)) - z).max() <= 1e-12 * max(1.0, np.abs(z).max())


@pytest.mark.parametrize("pole", [(0, 0, 0, 1.0), (0.6, 0, 0.8, 0)])
def test_stereographic_jacobian_matches_differences(pole):
    chart = StereographicChart(n=3, pole=np.array(pole))
    p = np.array([0.5, 0.5, 0.5, 0.5])
    t = np.array([0.5, -0.5, 0.5, -0.5])
    h = 1e-6
    fd = (chart.value(math.cos(h) * p + math.sin(h) * t) - chart.value(math.cos(h) * p - math.sin(h) * t)) / (2 * h)
    assert np.abs(chart.jacobian(p) @ t - fd).max() <= 1e-7


def test_stereographic_pole_is_singular():
    chart = StereographicChart.standard(2)
    with pytest.raises(DegenerateGeometryError):
        chart.value(np.array([0.0, 0.0, 1.0]))


def test_stereographic_rejects_off_sphere():
    with pytest.raises(DomainError):
        StereographicChart.standard(2).value(np.array([0.0, 0.0, 0.5]))


def test_stereographic_factor_positive(tau31):
    chart = StereographicChart.for_surface(tau31)
    _, _, P = tau31.sample(16, 16)
    assert np.all(chart.factor(P) > 0)


def test_chart_rotates_away_from_surface(tau31):
    # τ_{3,1}(π/2, π/2) is the north pole
    chart = StereographicChart.for_surface(tau31, clearance=0.3)
    assert chart.rotated
    _, _, P = tau31.sample(48, 48)
    P = P.reshape(-1, 4)
    assert chart.clearance(P) > StereographicChart.standard(3).clearance(P)


def test_chart_keeps_north_pole_when_clear():
    g = surface_by_name("equatorial-sphere")
    assert not StereographicChart.for_surface(g, clearance=0.3).rotated


def test_compose_chain_rule_matches_differences(tau31):
    chart = StereographicChart.for_surface(tau31, clearance=0.3)
    g = compose(tau31, chart)
    fd = replace(g, d1_fn=None, d2_fn=None)
    x, y = np.array([0.3, 1.1]), np.array([0.4, 0.9])
    for exact, approx in zip(g.d2(x, y), fd.d2(x, y)):
        assert np.abs(exact - approx).max() <= 1e-4 * max(1.0, np.abs(exact).max())


def test_inversion_is_involution():
    inv = SphereInversion(center=np.array([0.0, 0.0, 2.0]), radius=1.5)
    p = np.array([[0.3, -0.2, 0.1], [1.0, 1.0, 1.0]])
    assert np.allclose(inv.value(inv.value(p)), p, atol=1e-13)


def test_similarity_scales_area_of_sphere():
    sim = Similarity(scale=2.0, rotation=np.eye(3), translation=np.array([1.0, 0, 0]))
    g = compose(round_sphere(), sim)
    assert np.linalg.norm(g.eval(0.0, 0.0) - np.array([1.0, 0, 0])) == pytest.approx(2.0)


def test_surface_by_name_unknown():
    with pytest.raises(DomainError):
        surface_by_name("trefoil")
