"""
conformal.py — Möbius maps of Sⁿ, balancing, conformal volume, mass matrix.

A MobiusMap is R∘φ_a with a in the open ball and

    φ_a(x) = [(1 − |a|²)x + (1 + 2⟨a,x⟩ + |x|²)a] / (1 + 2⟨a,x⟩ + |a|²|x|²)

which fixes ±a/|a| on the sphere, sends 0 to a in the ball, and has
inverse φ_{−a}. Its conformal factor on the sphere is
c(p) = (1 − |a|²)/(1 + 2⟨a,p⟩ + |a|²), so V(γ∘f) = ∫ c² dμ_f.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.optimize
from scipy.stats import norm, qmc

from ..errors import ConvergenceError, DomainError
from .geometry import pullback_metric
from .numerics import sym_eigen_dense
from .surfaces import ParamSurface

logger = logging.getLogger(__name__)

RADII = tuple(round(0.1 * i, 1) for i in range(10))
CLIP_RADIUS = 0.95
_FD_STEP = 1e-5
_DAMPING = 0.5


# ── Möbius maps ───────────────────────────────────────────────────────────────
def _ball_apply(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    s = float(a @ a)
    t = x @ a
    r2 = np.sum(x * x, axis=-1)
    num = (1.0 - s) * x + (1.0 + 2.0 * t + r2)[..., None] * a
    return num / (1.0 + 2.0 * t + s * r2)[..., None]


@dataclass(frozen=True, eq=False)
class MobiusMap:
    n: int
    a: np.ndarray
    rotation: Optional[np.ndarray] = None

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if a.shape != (self.n + 1,):
            raise DomainError(f"Ball point must lie in R^{self.n + 1}, got shape {a.shape}")
        if not a @ a < 1.0:
            raise DomainError(f"Möbius parameter must satisfy |a| < 1, got |a| = {np.linalg.norm(a):.6g}")
        R = np.eye(self.n + 1) if self.rotation is None else np.asarray(self.rotation, dtype=float)
        if R.shape != (self.n + 1, self.n + 1) or np.abs(R.T @ R - np.eye(self.n + 1)).max() > 1e-12:
            raise DomainError("Möbius rotation must be orthogonal within 1e-12")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "rotation", R)

    @classmethod
    def identity(cls, n: int) -> "MobiusMap":
        return cls(n=n, a=np.zeros(n + 1))

    @property
    def is_identity(self) -> bool:
        return not np.any(self.a) and np.array_equal(self.rotation, np.eye(self.n + 1))

    def _raw(self, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        a = self.a
        s = float(a @ a)
        t = p @ a
        denom = 1.0 + 2.0 * t + s
        return ((1.0 - s) * p + (2.0 * (1.0 + t))[..., None] * a) / denom[..., None], denom

    def apply(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self.is_identity:
            return p.copy()
        q, _ = self._raw(p)
        q = q / np.linalg.norm(q, axis=-1, keepdims=True)
        return q @ self.rotation.T

    __call__ = apply

    def factor(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        s = float(self.a @ self.a)
        return (1.0 - s) / (1.0 + 2.0 * (p @ self.a) + s)

    def jacobian(self, p) -> np.ndarray:
        """Ambient derivative, exact along tangent directions of the sphere."""
        p = np.asarray(p, dtype=float)
        a = self.a
        s = float(a @ a)
        q, denom = self._raw(p)
        d = self.n + 1
        eye = np.eye(d)
        J = ((1.0 - s) * eye + 2.0 * np.outer(a, a) - 2.0 * q[..., :, None] * a[None, :]) / denom[..., None, None]
        return self.rotation @ J

    def inverse(self) -> "MobiusMap":
        return MobiusMap(n=self.n, a=-(self.rotation @ self.a), rotation=self.rotation.T)

    def compose(self, other: "MobiusMap") -> "MobiusMap":
        """self ∘ other, normalized back to the form R∘φ_c."""
        if other.n != self.n:
            raise DomainError("Cannot compose Möbius maps of different dimension")
        R12 = self.rotation @ other.rotation
        a_prime = other.rotation.T @ self.a
        c = _ball_apply(a_prime, other.a)
        basis = np.eye(self.n + 1)
        images = _ball_apply(-c, _sphere_apply(a_prime, _sphere_apply(other.a, basis)))
        U, _, Vt = np.linalg.svd(images.T)
        R_prime = U @ Vt
        return MobiusMap(n=self.n, a=R_prime.T @ c, rotation=R12 @ R_prime)


def _sphere_apply(a: np.ndarray, p: np.ndarray) -> np.ndarray:
    q = _ball_apply(a, p)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def mobius_apply(gamma: MobiusMap, p) -> np.ndarray:
    return gamma.apply(p)


def mobius_surface(f: ParamSurface, gamma: MobiusMap) -> ParamSurface:
    """γ∘f with exact first partials; second partials by differencing."""
    def point(x, y):
        return gamma.apply(f.point_fn(x, y))

    def first(x, y):
        J = gamma.jacobian(f.point_fn(x, y))
        return tuple(np.einsum("...ij,...j->...i", J, d) for d in f.d1(x, y))

    return ParamSurface(name=f"mobius({f.name})", ambient_dim=f.ambient_dim, point_fn=point, d1_fn=first,
                        domain=f.domain, ambient=f.ambient, metadata=dict(f.metadata))


# ── Weighted samples ──────────────────────────────────────────────────────────
@dataclass(frozen=True)
class SurfaceSample:
    """Points of f on a quadrature grid with area weights of one copy of f."""
    points: np.ndarray
    weights: np.ndarray

    @classmethod
    def of(cls, f: ParamSurface, n: int = 128) -> "SurfaceSample":
        u_rule, v_rule = f.domain.rules(n, n)
        U, V = np.meshgrid(u_rule.nodes, v_rule.nodes, indexing="ij")
        E, F, G = pullback_metric(f).egf(U, V)
        root = np.sqrt(np.clip(E * G - F * F, 0.0, None))
        w = root * np.outer(u_rule.weights, v_rule.weights) / f.domain.sheets
        return cls(points=f.eval(U, V).reshape(-1, f.ambient_dim), weights=w.ravel())

    @property
    def area(self) -> float:
        return float(self.weights.sum())

    def pushed(self, gamma: MobiusMap) -> Tuple[np.ndarray, np.ndarray]:
        if gamma.is_identity:
            return self.points, self.weights
        c = gamma.factor(self.points)
        return gamma.apply(self.points), self.weights * c * c


def _sample(f, n: int) -> SurfaceSample:
    return f if isinstance(f, SurfaceSample) else SurfaceSample.of(f, n)


def mobius_area(f, gamma: MobiusMap, n: int = 128) -> float:
    """V(γ∘f) = ∫ c² dμ_f."""
    _, w = _sample(f, n).pushed(gamma)
    return float(w.sum())


def center_of_mass(f, n: int = 128, gamma: Optional[MobiusMap] = None) -> np.ndarray:
    """Mean of the coordinates of γ∘f against the area measure of f itself.

    The measure stays on the source: moving the points by γ does not reweight them.
    """
    sample = _sample(f, n)
    w = sample.weights
    total = float(w.sum())
    if not total > 0.0:
        raise ConvergenceError("Surface has zero area; its center of mass is undefined", best=None)
    pts = sample.points if gamma is None or gamma.is_identity else gamma.apply(sample.points)
    return (w @ pts) / total


# ── Balancing ─────────────────────────────────────────────────────────────────
@dataclass
class BalanceResult:
    mobius: MobiusMap
    center_norm: float
    trace: List[float] = field(default_factory=list)

    @property
    def a(self) -> np.ndarray:
        return self.mobius.a


def balance(f, n: int = 128, tol: float = 1e-9, max_iter: int = 100) -> BalanceResult:
    """Find a with center_of_mass(φ_a∘f) = 0 by damped Newton."""
    sample = _sample(f, n)
    dim = sample.points.shape[1]
    if not sample.area > 0.0:
        raise ConvergenceError("Cannot balance a surface of zero area", best=None)

    def center(a: np.ndarray) -> np.ndarray:
        return center_of_mass(sample, gamma=MobiusMap(n=dim - 1, a=a))

    a = np.zeros(dim)
    F = center(a)
    trace = [float(np.linalg.norm(F))]
    for _ in range(max_iter):
        if trace[-1] <= tol:
            return BalanceResult(MobiusMap(n=dim - 1, a=a), trace[-1], trace)
        J = np.empty((dim, dim))
        for j in range(dim):
            e = np.zeros(dim)
            e[j] = _FD_STEP
            J[:, j] = (center(a + e) - center(a - e)) / (2.0 * _FD_STEP)
        step = np.linalg.lstsq(J, -F, rcond=None)[0]
        lam = 1.0
        for _ in range(40):
            trial = a + lam * step
            if trial @ trial < CLIP_RADIUS ** 2:
                F_trial = center(trial)
                if np.linalg.norm(F_trial) < trace[-1]:
                    break
            lam *= _DAMPING
        else:
            break
        a, F = trial, F_trial
        trace.append(float(np.linalg.norm(F)))
        logger.debug("balance: |center| = %.3e (step %.3g)", trace[-1], lam)
    if trace[-1] <= tol:
        return BalanceResult(MobiusMap(n=dim - 1, a=a), trace[-1], trace)
    raise ConvergenceError(f"Balancing did not reach |center| <= {tol:g}; best {min(trace):.3e}", best=min(trace))


# ── Conformal volume ──────────────────────────────────────────────────────────
@dataclass
class ConformalVolumeEstimate:
    sup_area: float
    argmax: np.ndarray
    base_area: float
    profile: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def max_excess(self) -> float:
        """Largest sampled V(γ∘f) − V(f) over nonzero a."""
        others = [area for r, area in self.profile if r > 0]
        return max(others) - self.base_area if others else 0.0


def _directions(dim: int, count: int, seed: int) -> np.ndarray:
    sobol = qmc.Sobol(d=dim, scramble=True, seed=seed)
    u = sobol.random(max(count, 1))
    z = norm.ppf(np.clip(u, 1e-12, 1.0 - 1e-12))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def conformal_volume_estimate(f, n: int = 128, sample_budget: int = 200, seed: int = 0) -> ConformalVolumeEstimate:
    """sup_a V(φ_a∘f) by radial-shell sampling plus a local Nelder–Mead ascent."""
    if sample_budget < 100:
        raise DomainError(f"sample_budget must be >= 100, got {sample_budget}")
    sample = _sample(f, n)
    dim = sample.points.shape[1]
    shells = [r for r in RADII if r > 0]
    per_shell = math.ceil(sample_budget / len(shells))
    dirs = _directions(dim, per_shell, seed)

    def area_at(a: np.ndarray) -> float:
        r = float(np.linalg.norm(a))
        if r > CLIP_RADIUS:
            a = a * (CLIP_RADIUS / r)
        return float(sample.pushed(MobiusMap(n=dim - 1, a=a))[1].sum())

    base = sample.area
    profile = [(0.0, base)]
    best_a, best = np.zeros(dim), base
    for r in shells:
        for d in dirs:
            a = r * d
            value = area_at(a)
            profile.append((r, value))
            if value > best:
                best_a, best = a, value

    opt = scipy.optimize.minimize(lambda a: -area_at(a), best_a, method="Nelder-Mead",
                                  options={"xatol": 1e-8, "fatol": 1e-13, "maxiter": 400 * dim})
    if -opt.fun > best:
        best_a, best = np.asarray(opt.x), float(-opt.fun)
        r = np.linalg.norm(best_a)
        if r > CLIP_RADIUS:
            best_a = best_a * (CLIP_RADIUS / r)
    logger.info("Conformal volume estimate: %.10g at |a| = %.3g (%d samples)", best, np.linalg.norm(best_a), len(profile))
    return ConformalVolumeEstimate(sup_area=best, argmax=best_a, base_area=base, profile=profile)


# ── Mass matrix ───────────────────────────────────────────────────────────────
@dataclass
class MassMatrix:
    entries: np.ndarray
    eigenvalues: np.ndarray
    rotation: np.ndarray
    nontrivial_count: int
    threshold: float

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries))

    def gap(self, k: int) -> float:
        """eigenvalues[k-1] / eigenvalues[k] (descending order); inf past the end."""
        if k >= len(self.eigenvalues):
            return math.inf
        low = abs(self.eigenvalues[k])
        return math.inf if low == 0.0 else float(self.eigenvalues[k - 1] / low)


def mass_matrix(f, n: int = 128, threshold: float = 1e-8) -> MassMatrix:
    """a^{ij} = ∫ f^i f^j dμ, diagonalized with descending eigenvalues."""
    sample = _sample(f, n)
    entries = (sample.points * sample.weights[:, None]).T @ sample.points
    entries = 0.5 * (entries + entries.T)
    pairs = sym_eigen_dense(entries)
    order = np.argsort(pairs.values)[::-1]
    values, vectors = pairs.values[order], pairs.vectors[:, order]
    count = int(np.count_nonzero(values > threshold * np.trace(entries)))
    return MassMatrix(entries=entries, eigenvalues=values, rotation=vectors.T,
                      nontrivial_count=count, threshold=threshold)
