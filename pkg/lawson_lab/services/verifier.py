"""
verifier.py — The claim suite behind `verify-paper`.

Each claim is a function of the Settings returning a ClaimOutcome. The suite
runs them sequentially (or on a capped thread pool), times each one, turns
crashes into failed claims and assembles a VerificationReport in claim-id
order.
"""

import functools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from .. import __version__
from ..config import Settings, thread_cap
from ..errors import DomainError
from .conformal import SurfaceSample, balance, conformal_volume_estimate, mass_matrix
from .geometry import area, g0_metric, max_mean_curvature, pullback_metric, willmore_energy
from .numerics import elliptic_E, elliptic_E_quadrature, lanczos_smallest
from .spectral import (
    PeriodicGrid,
    assemble_laplacian,
    extremality_probe,
    flat_metric,
    random_deformation,
    revolution_spectrum,
    richardson_cluster_value,
    spectrum,
    takahashi_residual,
)
from .surfaces import (
    UNIT_SPHERE,
    StereographicChart,
    clifford_torus,
    compose,
    lawson_bipolar,
    lawson_tau,
    round_sphere,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ENERGY_MODULUS = 2.0 * math.sqrt(2.0) / 3.0


def klein_energy() -> float:
    """6πE(2√2/3), the area of (K, g₀) and the Willmore energy of τ̃_{3,1}."""
    return 6.0 * math.pi * elliptic_E(ENERGY_MODULUS)


# ── Result types ──────────────────────────────────────────────────────────────
@dataclass
class ClaimOutcome:
    computed: Optional[float]
    target: Optional[float]
    tolerance: Optional[float]
    passed: bool
    detail: Dict[str, Any] = field(default_factory=dict)


@dataclass
class ClaimResult:
    claim_id: str
    description: str
    anchor: str
    computed: Optional[float]
    target: Optional[float]
    tolerance: Optional[float]
    passed: bool
    runtime_seconds: float = 0.0
    detail: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        out = {
            "id": self.claim_id,
            "description": self.description,
            "anchor": self.anchor,
            "computed": self.computed,
            "target": self.target,
            "tolerance": self.tolerance,
            "pass": self.passed,
            "detail": self.detail,
        }
        if self.error is not None:
            out["error"] = self.error
        return out


@dataclass
class VerificationReport:
    claims: List[ClaimResult]
    config: Dict[str, Any]
    version: str = __version__
    started_at: Optional[str] = None
    aborted: Optional[str] = None

    @property
    def overall_pass(self) -> bool:
        return self.aborted is None and bool(self.claims) and all(c.passed for c in self.claims)

    def claim(self, claim_id: str) -> ClaimResult:
        for c in self.claims:
            if c.claim_id == claim_id:
                return c
        raise KeyError(claim_id)

    def to_dict(self) -> Dict[str, Any]:
        """Reproducible part of the report; runtimes and timestamps live in timing()."""
        out = {
            "schema": SCHEMA_VERSION,
            "version": self.version,
            "config": self.config,
            "claims": [c.to_dict() for c in sorted(self.claims, key=lambda c: c.claim_id)],
            "overall_pass": self.overall_pass,
        }
        if self.aborted is not None:
            out["aborted"] = self.aborted
        return out

    def timing(self) -> Dict[str, Any]:
        return {
            "started_at": self.started_at,
            "runtime_seconds": {c.claim_id: round(c.runtime_seconds, 3) for c in self.claims},
            "total_seconds": round(sum(c.runtime_seconds for c in self.claims), 3),
        }


# ── Registry ──────────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class Claim:
    claim_id: str
    description: str
    anchor: str
    check: Callable[[Settings], ClaimOutcome]


CLAIMS: Dict[str, Claim] = {}


def claim(claim_id: str, description: str, anchor: str):
    def register(fn: Callable[[Settings], ClaimOutcome]) -> Callable[[Settings], ClaimOutcome]:
        if claim_id in CLAIMS:
            raise DomainError(f"Duplicate claim id {claim_id!r}")
        CLAIMS[claim_id] = Claim(claim_id, description, anchor, fn)
        return fn
    return register


def _rel(computed: float, target: float) -> float:
    return abs(computed - target) / abs(target)


# Surfaces and spectra shared by several claims. Settings is frozen, so it keys the cache.
@functools.lru_cache(maxsize=None)
def _tau31(reduce: bool = True, rank_tol: float = 1e-9):
    return lawson_bipolar(3, 1, reduce=reduce, rank_tol=rank_tol)


@functools.lru_cache(maxsize=4)
def _tau31_sample(n: int, rank_tol: float) -> SurfaceSample:
    return SurfaceSample.of(_tau31(True, rank_tol), n)


@functools.lru_cache(maxsize=4)
def _g0_spectrum(settings: Settings):
    metric = g0_metric("balanced")
    grid = PeriodicGrid.for_metric(metric, settings.spectrum_grid)
    coarse = PeriodicGrid.for_metric(metric, settings.spectrum_coarse_grid)
    return spectrum(metric, grid, count=settings.spectrum_count, tol=settings.eigen_tol,
                    seed=settings.seed, coarse=coarse, rel_tol=settings.cluster_rel_tol)


def _conformal_grid(settings: Settings) -> int:
    return max(16, settings.grid // 2)


# ── Claims ────────────────────────────────────────────────────────────────────
@claim("willmore_tau31", "Willmore energy of the stereographic image of τ̃_{3,1} equals 6πE(2√2/3)",
       "Willmore energy of the minimal Klein bottle in S⁴")
def check_willmore_tau31(settings: Settings) -> ClaimOutcome:
    f = _tau31(True, settings.rank_tol)
    chart = StereographicChart.for_surface(f, clearance=settings.stereo_clearance, seed=settings.seed)
    value = willmore_energy(compose(f, chart), settings.grid)
    target = klein_energy()
    return ClaimOutcome(value, target, 1e-5, _rel(value, target) <= 1e-5,
                        {"relative_error": _rel(value, target), "pole_rotated": chart.rotated})


@claim("area_g0", "Area of (K, g₀) and of the reduced bipolar pullback equal 6πE(2√2/3)",
       "λ₁·V(K, g₀) = 12πE(2√2/3) with λ₁ = 2")
def check_area_g0(settings: Settings) -> ClaimOutcome:
    target = klein_energy()
    analytic = area(g0_metric("rect"), settings.grid)
    pulled = area(pullback_metric(_tau31(True, settings.rank_tol)), settings.grid)
    ok = _rel(analytic, target) <= 1e-9 and _rel(pulled, target) <= 1e-5
    return ClaimOutcome(analytic, target, 1e-9, ok, {
        "analytic_relative_error": _rel(analytic, target),
        "pullback_area": pulled,
        "pullback_relative_error": _rel(pulled, target),
    })


@claim("spectrum_g0", "First nonzero eigenvalue of g₀ is 2 with multiplicity 5, next cluster ≥ 2.2",
       "λ₁(K, g₀) = 2 with multiplicity 5")
def check_spectrum_g0(settings: Settings) -> ClaimOutcome:
    result = _g0_spectrum(settings)
    if len(result.clusters) < 3:
        return ClaimOutcome(None, 2.0, 5e-3, False, {"clusters": result.clusters})
    lam1 = richardson_cluster_value(result, 1)
    mult = result.clusters[1][1]
    next_value = richardson_cluster_value(result, 2)
    ok = 1.995 <= lam1 <= 2.005 and mult == 5 and next_value >= 2.2
    return ClaimOutcome(lam1, 2.0, 5e-3, ok, {
        "multiplicity": mult,
        "next_cluster": next_value,
        "clusters": [[v, m] for v, m in result.clusters],
        "richardson": result.metadata.get("richardson"),
    })


@claim("minimality", "Grid mean curvature vanishes for τ_{3,1}, τ_{1,1}, τ_{2,1} in S³ and τ̃_{3,1} in S⁴",
       "τ_{m,k} and τ̃_{3,1} are minimal in the sphere")
def check_minimality(settings: Settings) -> ClaimOutcome:
    n = max(16, settings.grid // 4)
    lawson = {f"tau_{m}_{k}": max_mean_curvature(lawson_tau(m, k), n, UNIT_SPHERE)
              for m, k in ((3, 1), (1, 1), (2, 1))}
    bip = max_mean_curvature(_tau31(True, settings.rank_tol), n, UNIT_SPHERE)
    ok = max(lawson.values()) <= 1e-8 and bip <= 1e-7
    return ClaimOutcome(max(max(lawson.values()), bip), 0.0, 1e-7, ok, {**lawson, "bipolar_3_1": bip})


@claim("rank_dichotomy", "Affine span of τ̃_{3,1} has rank 5 and of τ̃_{1,1} rank 4, with a 10⁶ singular gap",
       "The bipolar surface lies in a hyperplane section of S⁵")
def check_rank_dichotomy(settings: Settings) -> ClaimOutcome:
    ranks, gaps = {}, {}
    for m, k in ((3, 1), (1, 1)):
        f = _tau31(True, settings.rank_tol) if (m, k) == (3, 1) else lawson_bipolar(m, k, rank_tol=settings.rank_tol)
        ranks[f"{m}_{k}"] = int(f.metadata["span_rank"])
        gaps[f"{m}_{k}"] = float(f.metadata.get("singular_gap", 0.0))
    ok = ranks["3_1"] == 5 and ranks["1_1"] == 4 and min(gaps.values()) >= 1e6
    return ClaimOutcome(float(ranks["3_1"]), 5.0, 0.0, ok, {"ranks": ranks, "singular_gaps": gaps})


@claim("takahashi", "Coordinates of τ̃_{3,1} are λ = 2 eigenfunctions (second-order residual decay)",
       "τ̃_{3,1} is immersed by first eigenfunctions")
def check_takahashi(settings: Settings) -> ClaimOutcome:
    f = _tau31(True, settings.rank_tol)
    metric = pullback_metric(f)
    levels = settings.takahashi_levels()
    if len(levels) < 2:
        raise DomainError("takahashi_grids needs at least two resolutions")
    residuals = [takahashi_residual(f, PeriodicGrid.for_metric(metric, n)) for n in levels]
    coarse, fine = residuals[-2], residuals[-1]
    ratio = levels[-1] / levels[-2]
    live = (coarse > 0) & (fine > 0)
    orders = np.log(coarse[live] / fine[live]) / math.log(ratio)
    finest = float(fine.max())
    ok = bool(live.any()) and bool(np.all((orders >= 1.7) & (orders <= 2.3))) and finest <= 5e-3
    return ClaimOutcome(finest, 0.0, 5e-3, ok, {
        "levels": levels,
        "residuals": [r.tolist() for r in residuals],
        "orders": orders.tolist(),
    })


@claim("clifford_calibration", "W of the stereographic Clifford torus is 2π² and W of the round sphere is 4π",
       "Willmore energies of the Clifford torus and the round sphere")
def check_clifford_calibration(settings: Settings) -> ClaimOutcome:
    f = clifford_torus()
    chart = StereographicChart.for_surface(f, clearance=settings.stereo_clearance, seed=settings.seed)
    torus = willmore_energy(compose(f, chart), settings.grid)
    sphere = willmore_energy(round_sphere(), settings.grid)
    target = 2.0 * math.pi ** 2
    ok = _rel(torus, target) <= 1e-6 and abs(sphere - 4.0 * math.pi) <= 1e-10
    return ClaimOutcome(torus, target, 1e-6, ok, {"sphere": sphere, "sphere_error": abs(sphere - 4.0 * math.pi)})


@claim("conformal_maximality", "τ̃_{3,1} maximizes area in its Möbius orbit and is already balanced",
       "Conformal volume of the minimal Klein bottle is attained at the identity")
def check_conformal_maximality(settings: Settings) -> ClaimOutcome:
    sample = _tau31_sample(_conformal_grid(settings), settings.rank_tol)
    estimate = conformal_volume_estimate(sample, sample_budget=settings.mobius_samples, seed=settings.seed)
    balanced = balance(sample, tol=settings.balance_tol)
    argmax = float(np.linalg.norm(estimate.argmax))
    a_norm = float(np.linalg.norm(balanced.a))
    ok = estimate.max_excess <= 1e-6 and argmax <= 1e-3 and a_norm <= 1e-6
    return ClaimOutcome(estimate.sup_area, sample.area, 1e-6, ok, {
        "max_excess": estimate.max_excess,
        "argmax_norm": argmax,
        "balance_a_norm": a_norm,
        "samples": len(estimate.profile),
    })


@claim("mass_matrix_tau31", "Mass matrix of τ̃_{3,1} in R⁶ has exactly 5 nontrivial eigenvalues, trace = area",
       "τ̃_{3,1} has at most five nontrivial coordinates")
def check_mass_matrix(settings: Settings) -> ClaimOutcome:
    f = _tau31(False, settings.rank_tol)
    sample = SurfaceSample.of(f, _conformal_grid(settings))
    mm = mass_matrix(sample)
    trace_error = abs(mm.trace - sample.area) / sample.area
    gap = mm.gap(5)
    ok = mm.nontrivial_count == 5 and trace_error <= 1e-8
    detail = {"eigenvalues": mm.eigenvalues.tolist(), "trace_relative_error": trace_error,
              "gap_5_6": gap if math.isfinite(gap) else None}
    if gap < 1e6:
        logger.warning("Mass matrix gap between the 5th and 6th eigenvalue is only %.3g", gap)
        detail["flagged"] = True
    return ClaimOutcome(float(mm.nontrivial_count), 5.0, 0.0, ok, detail)


@claim("extremality_g0", "g₀ is λ₁-extremal along seeded volume-preserving deformations; flat torus control is not",
       "Extremality of g₀ for the first eigenvalue")
def check_extremality_g0(settings: Settings) -> ClaimOutcome:
    metric = g0_metric("balanced")
    grid = PeriodicGrid.for_metric(metric, settings.extremality_grid)
    worst, trivial = -math.inf, 0
    probes = []
    for i in range(settings.extremality_directions):
        h = random_deformation(metric, seed=settings.seed + i, harmonics=settings.deformation_harmonics)
        probe = extremality_probe(metric, h, settings.extremality_t_max, grid, tol=settings.eigen_tol,
                                  seed=settings.seed)
        trivial += probe.trivial
        slack = probe.product - 1e-4 * abs(probe.d_minus) * abs(probe.d_plus)
        worst = max(worst, slack)
        probes.append([probe.d_minus, probe.d_plus])

    # rectangular torus: stretching one side changes λ₁·V smoothly, so D⁻·D⁺ > 0
    control = flat_metric(1.0, 0.8)

    def stretch(u, v):
        return 1.0 + 0.0 * u, 0.0 * u, -0.64 + 0.0 * u

    control_probe = extremality_probe(control, stretch, settings.extremality_t_max,
                                      PeriodicGrid.for_metric(control, settings.extremality_grid),
                                      tol=settings.eigen_tol, seed=settings.seed)
    ok = worst <= 1e-8 and control_probe.product >= 1e-3
    return ClaimOutcome(worst, 1e-8, 1e-4, ok, {
        "probes": probes,
        "trivial": trivial,
        "control_product": control_probe.product,
    })


@claim("oracle_equivalences", "Lanczos = dense, AGM = quadrature, 2D spectrum = separated spectrum",
       "Cross-checks of the numerical kernels")
def check_oracle_equivalences(settings: Settings) -> ClaimOutcome:
    g0 = g0_metric("balanced")
    lanczos_err = 0.0
    for metric, n in ((g0, 20), (flat_metric(1.0, 0.8), 16), (g0, 16)):
        op = assemble_laplacian(metric, PeriodicGrid.for_metric(metric, n, klein=False))
        count = 8
        iterative = lanczos_smallest(op, count, tol=settings.eigen_tol, seed=settings.seed).eigenvalues
        dense = op.dense_generalized_eigenvalues()[:count]
        lanczos_err = max(lanczos_err, float(np.max(np.abs(iterative - dense) / np.maximum(1.0, np.abs(dense)))))

    agm_err = max(abs(elliptic_E(k) - elliptic_E_quadrature(k)) for k in (0.0, 0.3, ENERGY_MODULUS, 0.99))

    two_d = np.asarray(_g0_spectrum(settings).metadata["richardson"])
    separated = revolution_spectrum(g0, range(settings.revolution_modes), n_v=settings.revolution_n_v,
                                    count=len(two_d), rel_tol=settings.cluster_rel_tol).eigenvalues
    k = min(len(two_d), len(separated))
    sep_err = float(np.max(np.abs(two_d[:k] - separated[:k])))

    ok = lanczos_err <= 1e-9 and agm_err <= 1e-12 and sep_err <= 2e-3
    return ClaimOutcome(sep_err, 0.0, 2e-3, ok, {
        "lanczos_vs_dense": lanczos_err,
        "agm_vs_quadrature": agm_err,
        "two_d_vs_separated": sep_err,
        "separated": separated[:k].tolist(),
    })


# ── Suite ─────────────────────────────────────────────────────────────────────
def select_claims(only: Optional[Sequence[str]] = None) -> List[Claim]:
    if not only:
        return [CLAIMS[cid] for cid in sorted(CLAIMS)]
    unknown = sorted(set(only) - set(CLAIMS))
    if unknown:
        raise DomainError(f"Unknown claim id(s) {unknown}. Valid: {sorted(CLAIMS)}")
    return [CLAIMS[cid] for cid in sorted(set(only))]


def run_claim(entry: Claim, settings: Settings) -> ClaimResult:
    logger.info("Claim %s started.", entry.claim_id)
    start = time.perf_counter()
    try:
        outcome = entry.check(settings)
        error = None
    except Exception as exc:
        logger.exception("Claim %s crashed: %s", entry.claim_id, exc)
        outcome = ClaimOutcome(None, None, None, False)
        error = f"{type(exc).__name__}: {exc}"
    elapsed = time.perf_counter() - start
    logger.info("Claim %s finished in %.1fs: %s", entry.claim_id, elapsed, "pass" if outcome.passed else "FAIL")
    return ClaimResult(
        claim_id=entry.claim_id,
        description=entry.description,
        anchor=entry.anchor,
        computed=None if outcome.computed is None else float(outcome.computed),
        target=None if outcome.target is None else float(outcome.target),
        tolerance=None if outcome.tolerance is None else float(outcome.tolerance),
        passed=bool(outcome.passed),
        runtime_seconds=elapsed,
        detail=outcome.detail,
        error=error,
    )


class Verifier:
    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings or Settings()

    def run(self, only: Optional[Sequence[str]] = None, parallel: bool = False) -> VerificationReport:
        selected = select_claims(only)
        if parallel and len(selected) > 1:
            workers = min(thread_cap(), len(selected))
            logger.info("Running %d claims on %d threads.", len(selected), workers)
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda c: run_claim(c, self.settings), selected))
        else:
            results = [run_claim(c, self.settings) for c in selected]
        return VerificationReport(claims=sorted(results, key=lambda r: r.claim_id), config=self.settings.as_dict())
