"""
geometry.py — Fundamental forms, mean curvature and surface integrals.

Metric components are carried as (E, F, G) arrays so that whole grids are
processed in one call. Integrals run over the domain rectangle and are
divided by domain.sheets, which gives the value for one copy of the
surface (Klein bottles are integrated on their double cover).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Tuple, Union

import numpy as np

from ..errors import DegenerateGeometryError, DomainError
from .numerics import integrate_grid
from .surfaces import EUCLIDEAN, UNIT_SPHERE, DeckMap, FundamentalDomain, ParamSurface

logger = logging.getLogger(__name__)

_DEGENERATE_DET = 1e-14
_FD_STEP = 1e-3

Components = Tuple[np.ndarray, np.ndarray, np.ndarray]
ComponentFn = Callable[[np.ndarray, np.ndarray], Components]


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...i->...", a, b)


def _raise_degenerate(det: np.ndarray, x, y, what: str) -> None:
    bad = ~(det > _DEGENERATE_DET)
    if np.any(bad):
        idx = tuple(np.argwhere(np.atleast_1d(bad))[0])
        loc = (float(np.atleast_1d(x)[idx]), float(np.atleast_1d(y)[idx]))
        raise DegenerateGeometryError(f"Degenerate metric on {what} (det g <= {_DEGENERATE_DET:g})", location=loc)


# ── Metric fields ─────────────────────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class MetricField:
    name: str
    domain: FundamentalDomain
    components: ComponentFn
    source: str = "analytic"
    derivatives: Optional[Callable[[np.ndarray, np.ndarray], Tuple[Components, Components]]] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def egf(self, x, y) -> Components:
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return tuple(np.broadcast_to(c, x.shape) for c in self.components(x, y))

    def g(self, x, y) -> np.ndarray:
        E, F, G = self.egf(x, y)
        return np.stack([np.stack([E, F], axis=-1), np.stack([F, G], axis=-1)], axis=-2)

    def sqrt_det(self, x, y) -> np.ndarray:
        E, F, G = self.egf(x, y)
        det = E * G - F * F
        _raise_degenerate(det, x, y, self.name)
        return np.sqrt(det)

    def dg(self, x, y) -> Tuple[Components, Components]:
        """((E_u, F_u, G_u), (E_v, F_v, G_v))."""
        if self.derivatives is not None:
            return self.derivatives(x, y)
        h = _FD_STEP
        du = _d4(lambda t: self.egf(x + t, y), h)
        dv = _d4(lambda t: self.egf(x, y + t), h)
        return du, dv

    def scaled(self, factor: Union[float, Callable[[np.ndarray, np.ndarray], np.ndarray]], name: str = None) -> "MetricField":
        """factor·g, with factor a constant or a function of (u, v)."""
        def comps(x, y):
            s = factor(x, y) if callable(factor) else factor
            return tuple(s * c for c in self.egf(x, y))

        return MetricField(name=name or f"scaled_{self.name}", domain=self.domain, components=comps,
                           source=self.source, metadata=dict(self.metadata))


def _d4(fn: Callable[[float], Components], h: float) -> Components:
    p2, p1, m1, m2 = fn(2 * h), fn(h), fn(-h), fn(-2 * h)
    return tuple((-a + 8 * b - 8 * c + d) / (12 * h) for a, b, c, d in zip(p2, p1, m1, m2))


def _dd4(fn: Callable[[float], Components], h: float) -> Components:
    p2, p1, z, m1, m2 = fn(2 * h), fn(h), fn(0.0), fn(-h), fn(-2 * h)
    return tuple((-a + 16 * b - 30 * c + 16 * d - e) / (12 * h * h) for a, b, c, d, e in zip(p2, p1, z, m1, m2))


def pullback_metric(f: ParamSurface) -> MetricField:
    """g = f♯δ with exact derivatives from the analytic second partials."""
    def comps(x, y):
        fx, fy = f.d1(x, y)
        return _dot(fx, fx), _dot(fx, fy), _dot(fy, fy)

    def derivs(x, y):
        fx, fy = f.d1(x, y)
        fxx, fxy, fyy = f.d2(x, y)
        du = (2 * _dot(fxx, fx), _dot(fxx, fy) + _dot(fx, fxy), 2 * _dot(fxy, fy))
        dv = (2 * _dot(fxy, fx), _dot(fxy, fy) + _dot(fx, fyy), 2 * _dot(fyy, fy))
        return du, dv

    return MetricField(name=f"pullback_{f.name}", domain=f.domain, components=comps,
                       source="pullback-of-immersion", derivatives=derivs)


def g0_metric(chart: str = "balanced", domain: Optional[FundamentalDomain] = None) -> MetricField:
    """The metric of revolution g₀ on the Klein bottle.

    chart="rect":     [(9 + (1+8cos²v)²)/(1+8cos²v)]·(du² + dv²/(1+8cos²v)) on [0, π/2)×[0, π)
    chart="balanced": Φ(w)·(du² + dw²/(3 + sin²2w)), Φ = 6(5 − sin²2w)/(3 + sin²2w), on the
                      double cover [0, π)² with the involution (u, w) ↦ (u + π/2, π/2 − w)
    """
    pi = math.pi
    if chart == "rect":
        def comps(u, v):
            q = 1.0 + 8.0 * np.cos(v) ** 2
            phi = (9.0 + q * q) / q
            return phi, 0.0 * u, phi / q

        domain = domain or FundamentalDomain((0.0, 0.5 * pi), (0.0, pi), ((0.5 * pi, 0.0), (0.0, pi)))
    elif chart == "balanced":
        def comps(u, w):
            s2 = np.sin(2.0 * w) ** 2
            phi = 6.0 * (5.0 - s2) / (3.0 + s2)
            return phi, 0.0 * u, phi / (3.0 + s2)

        domain = domain or FundamentalDomain((0.0, pi), (0.0, pi), ((pi, 0.0), (0.0, pi)),
                                             (DeckMap(0.5 * pi, 0.5 * pi, -1),))
    else:
        raise DomainError(f"Unknown g0 chart {chart!r}; expected 'rect' or 'balanced'")
    return MetricField(name=f"g0_{chart}", domain=domain, components=comps,
                       metadata={"revolution": True, "chart": chart})


def conformal_ratio(g: MetricField, h: MetricField, n: int = 64) -> Tuple[float, float]:
    """Best constant k with h ≈ k·g and the max relative deviation |h − k g|/|g|."""
    u_rule, v_rule = g.domain.rules(n, n)
    U, V = np.meshgrid(u_rule.nodes, v_rule.nodes, indexing="ij")
    gE, gF, gG = g.egf(U, V)
    hE, hF, hG = h.egf(U, V)
    det = gE * gG - gF * gF
    half_trace = 0.5 * (gG * hE - 2 * gF * hF + gE * hG) / det
    k = float(half_trace.mean())
    dev = np.sqrt((hE - k * gE) ** 2 + 2 * (hF - k * gF) ** 2 + (hG - k * gG) ** 2)
    norm = np.sqrt(gE ** 2 + 2 * gF ** 2 + gG ** 2)
    return k, float((dev / norm).max())


# ── Pointwise quantities ──────────────────────────────────────────────────────
@dataclass(frozen=True)
class CurvatureData:
    point: Tuple[float, float]
    first_form: np.ndarray
    mean_curvature_vector: np.ndarray
    ambient: str

    @property
    def abs_mean_curvature(self) -> float:
        return float(np.linalg.norm(self.mean_curvature_vector))


def first_fundamental_form(f: ParamSurface, x, y) -> np.ndarray:
    fx, fy = f.d1(x, y)
    E, F, G = _dot(fx, fx), _dot(fx, fy), _dot(fy, fy)
    _raise_degenerate(E * G - F * F, x, y, f.name)
    return np.stack([np.stack([E, F], axis=-1), np.stack([F, G], axis=-1)], axis=-2)


def mean_curvature(f: ParamSurface, x, y, ambient: Optional[str] = None) -> np.ndarray:
    """H = trace_g II, the full trace: |H| = 2 on the unit sphere in R³."""
    ambient = ambient or f.ambient
    if ambient not in (EUCLIDEAN, UNIT_SPHERE):
        raise DomainError(f"Unknown ambient {ambient!r}")
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    fx, fy = f.d1(x, y)
    fxx, fxy, fyy = f.d2(x, y)
    E, F, G = _dot(fx, fx), _dot(fx, fy), _dot(fy, fy)
    det = E * G - F * F
    _raise_degenerate(det, x, y, f.name)
    gi11, gi12, gi22 = G / det, -F / det, E / det
    trace = gi11[..., None] * fxx + 2.0 * gi12[..., None] * fxy + gi22[..., None] * fyy
    cx, cy = _dot(trace, fx), _dot(trace, fy)
    tangential = (gi11 * cx + gi12 * cy)[..., None] * fx + (gi12 * cx + gi22 * cy)[..., None] * fy
    H = trace - tangential
    if ambient == UNIT_SPHERE:
        p = f.eval(x, y)
        H = H - _dot(H, p)[..., None] * p
    return H


def curvature_data(f: ParamSurface, x: float, y: float, ambient: Optional[str] = None) -> CurvatureData:
    return CurvatureData(point=(float(x), float(y)), first_form=first_fundamental_form(f, x, y),
                         mean_curvature_vector=mean_curvature(f, x, y, ambient), ambient=ambient or f.ambient)


def gauss_curvature(metric: MetricField, x, y) -> np.ndarray:
    """Brioschi formula with 4th-order differences of E, F, G."""
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    h = _FD_STEP
    E, F, G = metric.egf(x, y)
    (Eu, Fu, Gu), (Ev, Fv, Gv) = metric.dg(x, y)
    Evv = _dd4(lambda t: metric.egf(x, y + t), h)[0]
    Guu = _dd4(lambda t: metric.egf(x + t, y), h)[2]
    Fuv = _d4(lambda s: (_d4(lambda t: metric.egf(x + s, y + t), h)[1],), h)[0]

    a = np.stack([
        np.stack([-0.5 * Evv + Fuv - 0.5 * Guu, 0.5 * Eu, Fu - 0.5 * Ev], axis=-1),
        np.stack([Fv - 0.5 * Gu, E, F], axis=-1),
        np.stack([0.5 * Gv, F, G], axis=-1),
    ], axis=-2)
    zero = np.zeros_like(E)
    b = np.stack([
        np.stack([zero, 0.5 * Ev, 0.5 * Gu], axis=-1),
        np.stack([0.5 * Ev, E, F], axis=-1),
        np.stack([0.5 * Gu, F, G], axis=-1),
    ], axis=-2)
    det = E * G - F * F
    _raise_degenerate(det, x, y, metric.name)
    return (np.linalg.det(a) - np.linalg.det(b)) / (det * det)


# ── Integrals ─────────────────────────────────────────────────────────────────
def _check_resolution(n_u: int, n_v: int) -> None:
    if n_u < 16 or n_v < 16:
        raise DomainError(f"Integral resolutions must be >= 16, got ({n_u}, {n_v})")


def _integrate(domain: FundamentalDomain, fn, n_u: int, n_v: int) -> float:
    u_rule, v_rule = domain.rules(n_u, n_v)
    return integrate_grid(fn, u_rule, v_rule) / domain.sheets


def area(obj: Union[ParamSurface, MetricField], n_u: int = 256, n_v: Optional[int] = None,
         check_doubling: bool = False) -> float:
    """∫√det g over one copy of the surface."""
    n_v = n_v or n_u
    _check_resolution(n_u, n_v)
    metric = obj if isinstance(obj, MetricField) else pullback_metric(obj)
    value = _integrate(metric.domain, metric.sqrt_det, n_u, n_v)
    if check_doubling:
        finer = _integrate(metric.domain, metric.sqrt_det, 2 * n_u, 2 * n_v)
        drift = abs(finer - value) / abs(finer)
        if drift > 1e-9:
            logger.warning("Area of %s drifts by %.2e under grid doubling", metric.name, drift)
        value = finer
    return value


def willmore_integrand(f: ParamSurface, x, y) -> np.ndarray:
    H = mean_curvature(f, x, y, EUCLIDEAN)
    fx, fy = f.d1(x, y)
    E, F, G = _dot(fx, fx), _dot(fx, fy), _dot(fy, fy)
    return 0.25 * _dot(H, H) * np.sqrt(E * G - F * F)


def willmore_energy(f: ParamSurface, n_u: int = 256, n_v: Optional[int] = None) -> float:
    """W(f) = ¼∫|H|² dμ for a surface in euclidean space."""
    if f.ambient != EUCLIDEAN:
        raise DomainError(f"willmore_energy needs a euclidean ambient, {f.name} lies in the {f.ambient}")
    n_v = n_v or n_u
    _check_resolution(n_u, n_v)
    return _integrate(f.domain, lambda U, V: willmore_integrand(f, U, V), n_u, n_v)


def total_curvature(metric: MetricField, n_u: int = 128, n_v: Optional[int] = None) -> float:
    """∫K dμ (Gauss–Bonnet: 2π·χ)."""
    n_v = n_v or n_u
    _check_resolution(n_u, n_v)
    return _integrate(metric.domain, lambda U, V: gauss_curvature(metric, U, V) * metric.sqrt_det(U, V), n_u, n_v)


def max_mean_curvature(f: ParamSurface, n: int = 64, ambient: Optional[str] = None) -> float:
    _, v_rule = f.domain.rules(n, n)
    u = f.domain.u_range[0] + f.domain.width * np.arange(n) / n
    U, V = np.meshgrid(u, v_rule.nodes, indexing="ij")
    return float(np.linalg.norm(mean_curvature(f, U, V, ambient), axis=-1).max())


def geometry_report(f: ParamSurface, n: int = 64, ambient: Optional[str] = None) -> Dict[str, np.ndarray]:
    """Per-gridpoint det g, |H| and K."""
    U, V, _ = f.sample(n, n)
    metric = pullback_metric(f)
    E, F, G = metric.egf(U, V)
    return {
        "x": U.ravel(),
        "y": V.ravel(),
        "det_g": (E * G - F * F).ravel(),
        "abs_H": np.linalg.norm(mean_curvature(f, U, V, ambient), axis=-1).ravel(),
        "K": gauss_curvature(metric, U, V).ravel(),
    }
