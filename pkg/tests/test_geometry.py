import math

import numpy as np
import pytest

from lawson_lab.errors import DegenerateGeometryError, DomainError
from lawson_lab.services.geometry import (
    area,
    conformal_ratio,
    curvature_data,
    first_fundamental_form,
    g0_metric,
    gauss_curvature,
    geometry_report,
    max_mean_curvature,
    mean_curvature,
    pullback_metric,
    total_curvature,
    willmore_energy,
)
from lawson_lab.services.numerics import elliptic_E
from lawson_lab.services.spectral import flat_metric, sphere_metric
from lawson_lab.services.surfaces import (
    EUCLIDEAN,
    UNIT_SPHERE,
    FundamentalDomain,
    ParamSurface,
    Similarity,
    SphereInversion,
    StereographicChart,
    clifford_torus,
    compose,
    lawson_tau,
    round_sphere,
)

KLEIN_AREA = 6 * math.pi * elliptic_E(2 * math.sqrt(2) / 3)


# ── Fundamental form / mean curvature ─────────────────────────────────────────

def test_clifford_first_form_is_identity():
    x, y = np.linspace(0, 6, 7), np.linspace(0, 3, 7)
    g = first_fundamental_form(clifford_torus(), x, y)
    assert np.allclose(g, np.eye(2), atol=1e-15)


def test_sphere_first_form_at_equator():
    assert np.allclose(first_fundamental_form(round_sphere(), 0.3, 0.0), np.eye(2), atol=1e-15)


def test_degenerate_point_reported():
    dom = FundamentalDomain((0.0, 1.0), (0.0, 1.0), ((1.0, 0.0), (0.0, 1.0)))

    def line(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return np.stack([x + y, x + y, 0 * x], axis=-1)

    f = ParamSurface(name="line", ambient_dim=3, point_fn=line, domain=dom)
    with pytest.raises(DegenerateGeometryError):
        first_fundamental_form(f, 0.5, 0.5)


def test_unit_sphere_mean_curvature_is_two():
    x, y = np.meshgrid(np.linspace(0, 6, 9), np.linspace(-1.2, 1.2, 9))
    H = mean_curvature(round_sphere(), x, y, EUCLIDEAN)
    assert np.allclose(np.linalg.norm(H, axis=-1), 2.0, atol=1e-12)


def test_mean_curvature_orthogonal_to_tangents_and_position(tau31):
    data = curvature_data(lawson_tau(2, 1), 0.7, 0.4, EUCLIDEAN)
    fx, fy = lawson_tau(2, 1).d1(0.7, 0.4)
    assert abs(data.mean_curvature_vector @ fx) <= 1e-9
    assert abs(data.mean_curvature_vector @ fy) <= 1e-9
    H = mean_curvature(tau31, 0.7, 0.4, UNIT_SPHERE)
    assert abs(H @ tau31.eval(0.7, 0.4)) <= 1e-9


@pytest.mark.parametrize("m,k", [(3, 1), (1, 1), (2, 1)])
def test_lawson_minimal_in_s3(m, k):
    assert max_mean_curvature(lawson_tau(m, k), 64, UNIT_SPHERE) <= 1e-8


def test_bipolar31_minimal_in_s4(bipolar31):
    assert max_mean_curvature(bipolar31, 64, UNIT_SPHERE) <= 1e-7


def test_unknown_ambient_rejected():
    with pytest.raises(DomainError):
        mean_curvature(round_sphere(), 0.0, 0.0, "hyperbolic")


# ── Metrics ───────────────────────────────────────────────────────────────────

def test_g0_charts_have_same_area():
    assert area(g0_metric("rect"), 256) == pytest.approx(KLEIN_AREA, rel=1e-9)
    assert area(g0_metric("balanced"), 256) == pytest.approx(KLEIN_AREA, rel=1e-9)


def test_g0_unknown_chart():
    with pytest.raises(DomainError):
        g0_metric("polar")


def test_g0_deck_invariance():
    metric = g0_metric("balanced")
    sigma = metric.domain.klein_involution
    u, w = np.linspace(0, 3, 11), np.linspace(0.1, 3, 11)
    su, sw = sigma.apply(u, w)
    # g_uw flips sign under the reflection; E and G are invariant
    E, F, G = metric.egf(u, w)
    E2, F2, G2 = metric.egf(su, sw)
    assert np.allclose(E, E2, atol=1e-12) and np.allclose(G, G2, atol=1e-12)
    assert np.allclose(F, -F2, atol=1e-12)


def test_bipolar_pullback_has_g0_area(bipolar31):
    assert area(pullback_metric(bipolar31), 256) == pytest.approx(KLEIN_AREA, rel=1e-5)


def test_scaled_metric_ratio():
    g = flat_metric(1.0, 2.0)
    k, dev = conformal_ratio(g, g.scaled(3.0))
    assert k == pytest.approx(3.0)
    assert dev <= 1e-14


# ── Curvature ─────────────────────────────────────────────────────────────────

def test_gauss_curvature_flat_and_round():
    u, v = np.linspace(0.1, 6, 5), np.linspace(-1.0, 1.0, 5)
    assert np.abs(gauss_curvature(flat_metric(1.0, 0.5), u, v + 2)).max() <= 1e-8
    assert np.abs(gauss_curvature(sphere_metric(), u, v) - 1.0).max() <= 1e-8


def test_clifford_pullback_is_flat():
    metric = pullback_metric(clifford_torus())
    assert np.abs(gauss_curvature(metric, np.array([0.2, 1.3]), np.array([0.5, 2.1]))).max() <= 1e-8


def test_gauss_bonnet_klein_bottle(bipolar31):
    assert abs(total_curvature(pullback_metric(bipolar31), 128)) <= 1e-5


# ── Integrals ─────────────────────────────────────────────────────────────────

def test_area_sphere_and_clifford():
    assert abs(area(round_sphere(), 64) - 4 * math.pi) <= 1e-10
    assert area(clifford_torus(), 64) == pytest.approx(2 * math.pi ** 2, rel=1e-12)


def test_area_rejects_coarse_grid():
    with pytest.raises(DomainError):
        area(round_sphere(), 8)


def test_area_klein_halves_covering_integral(bipolar31):
    full = bipolar31.with_domain(bipolar31.domain.with_deck_maps(()))
    assert area(full, 128) == pytest.approx(2 * area(bipolar31, 128), rel=1e-10)


def test_area_doubling_stable(bipolar31):
    assert area(bipolar31, 128) == pytest.approx(area(bipolar31, 256), rel=1e-9)


@pytest.mark.parametrize("radius", [1.0, 0.3, 2.5])
def test_willmore_round_sphere(radius):
    assert abs(willmore_energy(round_sphere(radius), 64) - 4 * math.pi) <= 1e-10


def test_willmore_needs_euclidean(tau31):
    with pytest.raises(DomainError):
        willmore_energy(tau31, 64)


def test_willmore_clifford_stereo():
    f = clifford_torus()
    g = compose(f, StereographicChart.for_surface(f, clearance=0.3))
    assert willmore_energy(g, 256) == pytest.approx(2 * math.pi ** 2, rel=1e-6)


def test_willmore_equals_area_for_bipolar(bipolar31):
    g = compose(bipolar31, StereographicChart.for_surface(bipolar31, clearance=0.3))
    assert willmore_energy(g, 256) == pytest.approx(KLEIN_AREA, rel=1e-5)


def test_willmore_conformal_invariance():
    base = compose(clifford_torus(), StereographicChart.for_surface(clifford_torus(), clearance=0.3))
    w0 = willmore_energy(base, 256)
    moved = compose(base, Similarity(scale=0.7, rotation=np.eye(3), translation=np.array([1.0, -2.0, 0.5])))
    inverted = compose(base, SphereInversion(center=np.array([40.0, 0.0, 0.0]), radius=3.0))
    assert willmore_energy(moved, 256) == pytest.approx(w0, rel=1e-10)
    assert willmore_energy(inverted, 256) == pytest.approx(w0, rel=1e-6)


def test_geometry_report_columns():
    report = geometry_report(round_sphere(), 16, EUCLIDEAN)
    assert set(report) == {"x", "y", "det_g", "abs_H", "K"}
    assert len(report["x"]) == 256
    assert np.allclose(report["abs_H"], 2.0, atol=1e-10)
