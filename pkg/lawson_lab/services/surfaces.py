"""
surfaces.py — Parametrized surfaces and the maps acting on them.

Surfaces are vectorized: every evaluator takes broadcastable parameter
arrays (x, y) and returns an array whose LAST axis holds the ambient
coordinates.

  lawson_tau          Ψ_{m,k} in S³ with analytic partials
  gauss_map_s3        unit normal of a surface inside S³
  bipolar             ψ ∧ ψ* in Plücker coordinates (12,13,14,23,24,34)
  lawson_bipolar      bipolar surface in the balanced profile chart, reduced
  reduce_affine_span  re-express a surface in an orthonormal basis of its span
  detect_deck_maps    numerical search for deck transformations
  StereographicChart / SphereInversion / Similarity + compose
  round_sphere, equatorial_sphere, flat_torus
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import AmbiguousRankError, DegenerateGeometryError, DomainError
from .numerics import QuadratureRule, gauss_legendre, periodic_trapezoid

logger = logging.getLogger(__name__)

EUCLIDEAN = "euclidean"
UNIT_SPHERE = "unit-sphere"

PLUCKER_PAIRS: Tuple[Tuple[int, int], ...] = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))

_DECK_TOL = 1e-9
_SAMPLE_OFFSET = 0.3183  # keeps detection samples off symmetric lines
_TWO_PI = 2.0 * math.pi

PointFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
PairFn = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]
TripleFn = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray, np.ndarray]]


def _stack(*components) -> np.ndarray:
    return np.stack(np.broadcast_arrays(*components), axis=-1)


def _xy(x, y) -> Tuple[np.ndarray, np.ndarray]:
    return np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))


# ── Domains ───────────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class DeckMap:
    """(x, y) ↦ (x + shift, offset + sign·y)."""
    shift: float
    offset: float
    sign: int

    @property
    def orientation_reversing(self) -> bool:
        return self.sign < 0

    def apply(self, x, y) -> Tuple[np.ndarray, np.ndarray]:
        x, y = _xy(x, y)
        return x + self.shift, self.offset + self.sign * y

    def to_dict(self) -> Dict[str, Any]:
        return {"shift": self.shift, "offset": self.offset, "sign": self.sign,
                "orientation_reversing": self.orientation_reversing}


@dataclass(frozen=True)
class FundamentalDomain:
    u_range: Tuple[float, float]
    v_range: Tuple[float, float]
    lattice: Tuple[Tuple[float, float], Tuple[float, float]]
    deck_maps: Tuple[DeckMap, ...] = ()
    v_periodic: bool = True

    def __post_init__(self):
        L = np.asarray(self.lattice, dtype=float)
        if L.shape != (2, 2) or abs(np.linalg.det(L)) < 1e-12:
            raise DomainError(f"Lattice generators must be independent, got {self.lattice}")
        for sigma in self.deck_maps:
            if sigma.orientation_reversing:
                square = (2.0 * sigma.shift, 0.0)
            else:
                square = (2.0 * sigma.shift, 2.0 * sigma.offset)
            if not self.in_lattice(square):
                raise DomainError(f"Deck map {sigma} is not an involution modulo the lattice")

    def in_lattice(self, vec: Sequence[float], tol: float = 1e-9) -> bool:
        coeffs = np.linalg.solve(np.asarray(self.lattice, dtype=float).T, np.asarray(vec, dtype=float))
        return bool(np.all(np.abs(coeffs - np.round(coeffs)) <= tol))

    @property
    def width(self) -> float:
        return self.u_range[1] - self.u_range[0]

    @property
    def height(self) -> float:
        return self.v_range[1] - self.v_range[0]

    @property
    def diameter(self) -> float:
        return math.hypot(self.width, self.height)

    @property
    def klein_involution(self) -> Optional[DeckMap]:
        for sigma in self.deck_maps:
            if sigma.orientation_reversing:
                return sigma
        return None

    @property
    def is_klein(self) -> bool:
        return self.klein_involution is not None

    @property
    def sheets(self) -> int:
        """How many times the rectangle covers the surface."""
        return 2 if self.is_klein else 1

    def rules(self, n_u: int, n_v: int) -> Tuple[QuadratureRule, QuadratureRule]:
        u_rule = periodic_trapezoid(n_u, *self.u_range)
        if self.v_periodic:
            v_rule = periodic_trapezoid(n_v, *self.v_range)
        else:
            v_rule = gauss_legendre(n_v, *self.v_range)
        return u_rule, v_rule

    def with_deck_maps(self, deck_maps: Sequence[DeckMap]) -> "FundamentalDomain":
        return replace(self, deck_maps=tuple(deck_maps))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "u_range": list(self.u_range),
            "v_range": list(self.v_range),
            "lattice": [list(g) for g in self.lattice],
            "deck_maps": [d.to_dict() for d in self.deck_maps],
            "v_periodic": self.v_periodic,
            "sheets": self.sheets,
        }


# ── Surfaces ──────────────────────────────────────────────────────────────────
def _fd_first(fn: PointFn, x, y, h: float) -> Tuple[np.ndarray, np.ndarray]:
    def d4(step):
        fx = (-fn(x + 2 * step, y) + 8 * fn(x + step, y) - 8 * fn(x - step, y) + fn(x - 2 * step, y)) / (12 * step)
        fy = (-fn(x, y + 2 * step) + 8 * fn(x, y + step) - 8 * fn(x, y - step) + fn(x, y - 2 * step)) / (12 * step)
        return fx, fy

    coarse, fine = d4(h), d4(0.5 * h)
    return tuple((16.0 * f - c) / 15.0 for f, c in zip(fine, coarse))


def _fd_second(fn: PointFn, x, y, h: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    def d(step):
        f0 = fn(x, y)
        fxx = (-fn(x + 2 * step, y) + 16 * fn(x + step, y) - 30 * f0
               + 16 * fn(x - step, y) - fn(x - 2 * step, y)) / (12 * step * step)
        fyy = (-fn(x, y + 2 * step) + 16 * fn(x, y + step) - 30 * f0
               + 16 * fn(x, y - step) - fn(x, y - 2 * step)) / (12 * step * step)
        fxy = (fn(x + step, y + step) - fn(x + step, y - step)
               - fn(x - step, y + step) + fn(x - step, y - step)) / (4 * step * step)
        return fxx, fxy, fyy

    (cxx, cxy, cyy), (fxx, fxy, fyy) = d(h), d(0.5 * h)
    return (16.0 * fxx - cxx) / 15.0, (4.0 * fxy - cxy) / 3.0, (16.0 * fyy - cyy) / 15.0


@dataclass(frozen=True, eq=False)
class ParamSurface:
    name: str
    ambient_dim: int
    point_fn: PointFn
    domain: FundamentalDomain
    ambient: str = EUCLIDEAN
    d1_fn: Optional[PairFn] = None
    d2_fn: Optional[TripleFn] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def analytic(self) -> bool:
        return self.d1_fn is not None and self.d2_fn is not None

    @property
    def fd_step(self) -> float:
        return 1e-3 * self.domain.diameter

    def eval(self, x, y) -> np.ndarray:
        x, y = _xy(x, y)
        return self.point_fn(x, y)

    def d1(self, x, y) -> Tuple[np.ndarray, np.ndarray]:
        x, y = _xy(x, y)
        if self.d1_fn is not None:
            return self.d1_fn(x, y)
        return _fd_first(self.point_fn, x, y, self.fd_step)

    def d2(self, x, y) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        x, y = _xy(x, y)
        if self.d2_fn is not None:
            return self.d2_fn(x, y)
        return _fd_second(self.point_fn, x, y, self.fd_step)

    def sample(self, n_u: int, n_v: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        u_rule, v_rule = self.domain.rules(n_u, n_v)
        U, V = np.meshgrid(u_rule.nodes, v_rule.nodes, indexing="ij")
        return U, V, self.eval(U, V)

    def deck_defect(self, sigma: DeckMap, n: int = 32) -> float:
        U, V = _detection_grid(self.domain, n)
        return float(np.abs(self.eval(*sigma.apply(U, V)) - self.eval(U, V)).max())

    def with_domain(self, domain: FundamentalDomain) -> "ParamSurface":
        return replace(self, domain=domain)


# ── Lawson family ─────────────────────────────────────────────────────────────
def _lawson_domain(m: int, k: int) -> FundamentalDomain:
    pi = math.pi
    if m % 2 and k % 2:
        return FundamentalDomain((0.0, _TWO_PI), (0.0, pi), ((pi, pi), (pi, -pi)))
    lattice = ((_TWO_PI, 0.0), (0.0, _TWO_PI))
    sigma = DeckMap(pi, 0.0, -1) if m % 2 == 0 else DeckMap(pi, pi, -1)
    return FundamentalDomain((0.0, _TWO_PI), (0.0, _TWO_PI), lattice, (sigma,))


def lawson_tau(m: int, k: int) -> ParamSurface:
    """Ψ_{m,k}(x, y) = (cos mx cos y, sin mx cos y, cos kx sin y, sin kx sin y)."""
    if m < 1 or k < 1 or math.gcd(m, k) != 1:
        raise DomainError(f"lawson_tau needs positive coprime (m, k), got ({m}, {k})")

    def point(x, y):
        cy, sy = np.cos(y), np.sin(y)
        return _stack(np.cos(m * x) * cy, np.sin(m * x) * cy, np.cos(k * x) * sy, np.sin(k * x) * sy)

    def first(x, y):
        cy, sy = np.cos(y), np.sin(y)
        cm, sm, ck, sk = np.cos(m * x), np.sin(m * x), np.cos(k * x), np.sin(k * x)
        fx = _stack(-m * sm * cy, m * cm * cy, -k * sk * sy, k * ck * sy)
        fy = _stack(-cm * sy, -sm * sy, ck * cy, sk * cy)
        return fx, fy

    def second(x, y):
        cy, sy = np.cos(y), np.sin(y)
        cm, sm, ck, sk = np.cos(m * x), np.sin(m * x), np.cos(k * x), np.sin(k * x)
        fxx = _stack(-m * m * cm * cy, -m * m * sm * cy, -k * k * ck * sy, -k * k * sk * sy)
        fxy = _stack(m * sm * sy, -m * cm * sy, -k * sk * cy, k * ck * cy)
        return fxx, fxy, -point(x, y)

    return ParamSurface(
        name=f"tau_{m}_{k}", ambient_dim=4, point_fn=point, d1_fn=first, d2_fn=second,
        domain=_lawson_domain(m, k), ambient=UNIT_SPHERE,
        metadata={"family": "lawson", "m": m, "k": k},
    )


def _lawson_normal(m: int, k: int, domain: FundamentalDomain) -> ParamSurface:
    # ψ* = v / √E with E = m²cos²y + k²sin²y
    def parts(y):
        cy, sy = np.cos(y), np.sin(y)
        E = m * m * cy * cy + k * k * sy * sy
        dE = (k * k - m * m) * np.sin(2 * y)
        ddE = 2.0 * (k * k - m * m) * np.cos(2 * y)
        r = E ** -0.5
        dr = -0.5 * E ** -1.5 * dE
        ddr = 0.75 * E ** -2.5 * dE * dE - 0.5 * E ** -1.5 * ddE
        return cy, sy, r, dr, ddr

    def v_terms(x, cy, sy):
        cm, sm, ck, sk = np.cos(m * x), np.sin(m * x), np.cos(k * x), np.sin(k * x)
        v = _stack(k * sy * sm, -k * sy * cm, -m * cy * sk, m * cy * ck)
        vx = _stack(m * k * sy * cm, m * k * sy * sm, -m * k * cy * ck, -m * k * cy * sk)
        vy = _stack(k * cy * sm, -k * cy * cm, m * sy * sk, -m * sy * ck)
        vxx = _stack(-m * m * k * sy * sm, m * m * k * sy * cm, m * k * k * cy * sk, -m * k * k * cy * ck)
        vxy = _stack(m * k * cy * cm, m * k * cy * sm, m * k * sy * ck, m * k * sy * sk)
        return v, vx, vy, vxx, vxy

    def point(x, y):
        cy, sy, r, _, _ = parts(y)
        return r[..., None] * v_terms(x, cy, sy)[0]

    def first(x, y):
        cy, sy, r, dr, _ = parts(y)
        v, vx, vy, _, _ = v_terms(x, cy, sy)
        r, dr = r[..., None], dr[..., None]
        return r * vx, dr * v + r * vy

    def second(x, y):
        cy, sy, r, dr, ddr = parts(y)
        v, vx, vy, vxx, vxy = v_terms(x, cy, sy)
        r, dr, ddr = r[..., None], dr[..., None], ddr[..., None]
        return r * vxx, dr * vx + r * vxy, ddr * v + 2.0 * dr * vy - r * v

    return ParamSurface(
        name=f"gauss_tau_{m}_{k}", ambient_dim=4, point_fn=point, d1_fn=first, d2_fn=second,
        domain=domain, ambient=UNIT_SPHERE, metadata={"family": "lawson-normal", "m": m, "k": k},
    )


def _cross4(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Generalized cross product: the vector n with ⟨n, d⟩ = det[a, b, c, d]."""
    M = np.stack([a, b, c], axis=-2)
    cols = []
    for j in range(4):
        minor = np.delete(M, j, axis=-1)
        # cofactor of the last row, 0-based column j
        cols.append((-1.0) ** (j + 1) * np.linalg.det(minor))
    return np.stack(cols, axis=-1)


def gauss_map_s3(psi: ParamSurface, branch_tol: float = 1e-10) -> ParamSurface:
    """Unit normal of ψ inside S³, oriented by det[ψ, ψx, ψy, ψ*] > 0."""
    if psi.ambient_dim != 4 or psi.ambient != UNIT_SPHERE:
        raise DomainError(f"gauss_map_s3 needs a surface in S³, got {psi.name} in R^{psi.ambient_dim}")
    meta = psi.metadata
    if meta.get("family") == "lawson" and psi.analytic:
        return _lawson_normal(meta["m"], meta["k"], psi.domain)

    def point(x, y):
        p = psi.point_fn(x, y)
        fx, fy = psi.d1(x, y)
        n = _cross4(p, fx, fy)
        norm = np.linalg.norm(n, axis=-1)
        scale = np.linalg.norm(fx, axis=-1) * np.linalg.norm(fy, axis=-1)
        bad = norm <= branch_tol * scale
        if np.any(bad):
            idx = np.argwhere(np.atleast_1d(bad))[0]
            loc = (float(np.atleast_1d(x)[tuple(idx)]), float(np.atleast_1d(y)[tuple(idx)]))
            raise DegenerateGeometryError(f"Branch point of {psi.name}: rank of (ψ, ψx, ψy) < 3", location=loc)
        n = n / norm[..., None]
        sign = np.sign(np.linalg.det(np.stack([p, fx, fy, n], axis=-2)))
        return n * np.where(sign < 0, -1.0, 1.0)[..., None]

    return ParamSurface(name=f"gauss_{psi.name}", ambient_dim=4, point_fn=point,
                        domain=psi.domain, ambient=UNIT_SPHERE)


# ── Bipolar surfaces ──────────────────────────────────────────────────────────
def wedge(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.stack([a[..., i] * b[..., j] - a[..., j] * b[..., i] for i, j in PLUCKER_PAIRS], axis=-1)


def bipolar(psi: ParamSurface, detect: bool = True) -> ParamSurface:
    """ψ̃ = ψ ∧ ψ* in S⁵."""
    star = gauss_map_s3(psi)

    def point(x, y):
        return wedge(psi.point_fn(x, y), star.point_fn(x, y))

    def first(x, y):
        p, q = psi.point_fn(x, y), star.point_fn(x, y)
        px, py = psi.d1(x, y)
        qx, qy = star.d1(x, y)
        return wedge(px, q) + wedge(p, qx), wedge(py, q) + wedge(p, qy)

    def second(x, y):
        p, q = psi.point_fn(x, y), star.point_fn(x, y)
        px, py = psi.d1(x, y)
        qx, qy = star.d1(x, y)
        pxx, pxy, pyy = psi.d2(x, y)
        qxx, qxy, qyy = star.d2(x, y)
        fxx = wedge(pxx, q) + 2.0 * wedge(px, qx) + wedge(p, qxx)
        fxy = wedge(pxy, q) + wedge(px, qy) + wedge(py, qx) + wedge(p, qxy)
        fyy = wedge(pyy, q) + 2.0 * wedge(py, qy) + wedge(p, qyy)
        return fxx, fxy, fyy

    surface = ParamSurface(
        name=f"bipolar_{psi.name}", ambient_dim=6, point_fn=point, d1_fn=first, d2_fn=second,
        domain=psi.domain, ambient=UNIT_SPHERE, metadata={**psi.metadata, "bipolar": True},
    )
    if detect:
        surface = surface.with_domain(detect_domain(surface))
    return surface


def reparametrize_v(f: ParamSurface, profile: Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray, np.ndarray]],
                    name: Optional[str] = None, domain: Optional[FundamentalDomain] = None) -> ParamSurface:
    """F(x, w) = f(x, y(w)); `profile` returns (y, y', y'') at w."""
    def point(x, w):
        return f.point_fn(x, profile(w)[0])

    def first(x, w):
        y, dy, _ = profile(w)
        fx, fy = f.d1(x, y)
        return fx, fy * dy[..., None]

    def second(x, w):
        y, dy, ddy = profile(w)
        _, fy = f.d1(x, y)
        fxx, fxy, fyy = f.d2(x, y)
        dy, ddy = dy[..., None], ddy[..., None]
        return fxx, fxy * dy, fyy * dy * dy + fy * ddy

    return replace(f, name=name or f"{f.name}_w", point_fn=point, d1_fn=first, d2_fn=second,
                   domain=domain or f.domain)


def balanced_profile(m: int, k: int) -> Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """tan y = √(m/k)·tan w, continued across the branches of tan."""
    a = math.sqrt(m / k)

    def profile(w):
        w = np.asarray(w, dtype=float)
        q = 1.0 + (a * a - 1.0) * np.sin(w) ** 2
        dq = (a * a - 1.0) * np.sin(2.0 * w)
        return np.arctan2(a * np.sin(w), np.cos(w)), a / q, -a * dq / (q * q)

    return profile


def lawson_bipolar(m: int, k: int, reduce: bool = True, rank_tol: float = 1e-9) -> ParamSurface:
    """τ̃_{m,k} in the balanced chart (x, w), reduced to its span.

    In this chart the orientation-reversing symmetry of τ̃_{3,1} is the
    affine map (x, w) ↦ (x + π/2, π/2 − w), so detect_deck_maps can see it.
    """
    tau = lawson_tau(m, k)
    surface = reparametrize_v(bipolar(tau, detect=False), balanced_profile(m, k),
                              name=f"bipolar_{m}_{k}")
    if reduce:
        surface = reduce_affine_span(surface, tol=rank_tol)
    surface = surface.with_domain(detect_domain(surface))
    surface.metadata.update({"family": "lawson-bipolar", "m": m, "k": k, "chart": "balanced"})
    return surface


# ── Span reduction ────────────────────────────────────────────────────────────
def _rank(sv: np.ndarray, tol: float, name: str) -> int:
    if sv[0] == 0.0:
        return 0
    rel = sv / sv[0]
    ambiguous = (rel >= 0.1 * tol) & (rel <= 10.0 * tol)
    if np.any(ambiguous):
        raise AmbiguousRankError(
            f"Ambiguous span rank for {name}: relative singular values {rel[ambiguous].tolist()} "
            f"lie within [{0.1 * tol:g}, {10 * tol:g}]", singular_values=sv.tolist(),
        )
    return int(np.count_nonzero(rel >= tol))


def reduce_affine_span(f: ParamSurface, sample_count: Optional[int] = None, tol: float = 1e-9) -> ParamSurface:
    sample_count = sample_count or max(4096, 10 * f.ambient_dim)
    if sample_count < 10 * f.ambient_dim:
        raise DomainError(f"sample_count must be >= {10 * f.ambient_dim}, got {sample_count}")
    n = max(16, math.ceil(math.sqrt(sample_count)))
    U, V = _detection_grid(f.domain, n)
    P = f.eval(U, V).reshape(-1, f.ambient_dim)

    centered_sv = np.linalg.svd(P - P.mean(axis=0), compute_uv=False)
    affine_rank = _rank(centered_sv, tol, f.name)
    _, linear_sv, Vt = np.linalg.svd(P, full_matrices=False)
    linear_rank = _rank(linear_sv, tol, f.name)
    if linear_rank != affine_rank:
        logger.info("%s: affine rank %d, linear rank %d; using the linear span", f.name, affine_rank, linear_rank)
    basis = Vt[:linear_rank].T  # ambient_dim × r
    gap = math.inf
    if 0 < affine_rank < len(centered_sv) and centered_sv[affine_rank] > 0:
        gap = float(centered_sv[affine_rank - 1] / centered_sv[affine_rank])

    def project(arr):
        return arr @ basis

    def point(x, y):
        return project(f.point_fn(x, y))

    def first(x, y):
        return tuple(project(d) for d in f.d1(x, y))

    def second(x, y):
        return tuple(project(d) for d in f.d2(x, y))

    return replace(
        f, name=f.name, ambient_dim=linear_rank, point_fn=point, d1_fn=first, d2_fn=second,
        metadata={**f.metadata, "span_rank": affine_rank, "linear_rank": linear_rank,
                  "singular_values": centered_sv.tolist(), "singular_gap": gap, "basis": basis},
    )


# ── Deck transformations ──────────────────────────────────────────────────────
def _detection_grid(domain: FundamentalDomain, n: int) -> Tuple[np.ndarray, np.ndarray]:
    s = (np.arange(n) + _SAMPLE_OFFSET) / n
    u = domain.u_range[0] + domain.width * s
    v = domain.v_range[0] + domain.height * s
    return np.meshgrid(u, v, indexing="ij")


def quarter_candidates(domain: FundamentalDomain) -> List[DeckMap]:
    out = []
    for i in range(4):
        for j in range(4):
            for sign in (1, -1):
                if i == 0 and j == 0 and sign == 1:
                    continue
                out.append(DeckMap(domain.width * i / 4, domain.height * j / 4, sign))
    return out


def detect_deck_maps(f: ParamSurface, candidates: Optional[Sequence[DeckMap]] = None,
                     grid: int = 32, tol: float = _DECK_TOL) -> List[DeckMap]:
    """Candidate maps σ with sup |f∘σ − f| ≤ tol on a grid×grid sample."""
    if candidates is None:
        candidates = quarter_candidates(f.domain)
    if len(candidates) == 0:
        raise DomainError("Empty deck-map candidate family")
    U, V = _detection_grid(f.domain, grid)
    base = f.eval(U, V)
    found = []
    for sigma in candidates:
        defect = float(np.abs(f.eval(*sigma.apply(U, V)) - base).max())
        if defect <= tol:
            found.append(sigma)
    logger.debug("%s: %d of %d deck candidates match", f.name, len(found), len(candidates))
    return found


def _egcd(a: int, b: int) -> Tuple[int, int, int]:
    x0, x1, y0, y1 = 1, 0, 0, 1
    while b:
        q, a, b = a // b, b, a % b
        x0, x1 = x1, x0 - q * x1
        y0, y1 = y1, y0 - q * y1
    return a, x0, y0


def _hermite(vectors: Sequence[Tuple[int, int]]) -> Tuple[int, int, int]:
    """Basis {(p, 0), (q, r)} of the integer lattice spanned by `vectors`."""
    p = q = r = 0
    for a, b in vectors:
        if b < 0:
            a, b = -a, -b
        if b == 0:
            p = math.gcd(p, abs(a))
        elif r == 0:
            q, r = a, b
        else:
            g, x, y = _egcd(r, b)
            p = math.gcd(p, abs((b // g) * q - (r // g) * a))
            q, r = x * q + y * a, g
    if p == 0 or r == 0:
        raise DomainError("Deck translations do not span a lattice")
    return p, q % p, r


def _to_units(vec: Sequence[float], du: float, dv: float) -> Tuple[int, int]:
    a, b = vec[0] / du, vec[1] / dv
    ia, ib = round(a), round(b)
    if abs(a - ia) > 1e-7 or abs(b - ib) > 1e-7:
        raise DomainError(f"Lattice vector {tuple(vec)} is not on the quarter grid")
    return int(ia), int(ib)


def _canonical_reflection(sigma: DeckMap, domain: FundamentalDomain) -> DeckMap:
    (A, _), (c, B) = domain.lattice
    turns = math.floor((sigma.offset - domain.v_range[0]) / B + 1e-9)
    t = sigma.offset - turns * B
    s = math.fmod(sigma.shift - turns * c, A)
    if s < -1e-9:
        s += A
    if abs(s - A) < 1e-9:
        s = 0.0
    return DeckMap(round(s, 12) + 0.0, round(t, 12) + 0.0, -1)


def detect_domain(f: ParamSurface, grid: int = 32, tol: float = _DECK_TOL, max_rounds: int = 4) -> FundamentalDomain:
    """Shrink f's covering lattice by detected translations and attach reflections."""
    domain = f.domain
    for _ in range(max_rounds):
        found = detect_deck_maps(f.with_domain(domain), grid=grid, tol=tol)
        du, dv = domain.width / 4, domain.height / 4
        vectors = [_to_units(g, du, dv) for g in domain.lattice]
        vectors += [_to_units((s.shift, s.offset), du, dv) for s in found if not s.orientation_reversing]
        p, q, r = _hermite(vectors)
        lattice = ((p * du, 0.0), (q * du, r * dv))
        refined = FundamentalDomain(
            (domain.u_range[0], domain.u_range[0] + p * du),
            (domain.v_range[0], domain.v_range[0] + r * dv), lattice,
        )
        if math.isclose(refined.width, domain.width) and math.isclose(refined.height, domain.height):
            reflections = {}
            for sigma in found:
                if sigma.orientation_reversing:
                    canon = _canonical_reflection(sigma, refined)
                    reflections[(canon.shift, canon.offset)] = canon
            deck = sorted(reflections.values(), key=lambda d: (d.shift, d.offset))
            if len(deck) > 1:
                logger.warning("%s: %d distinct orientation-reversing deck classes", f.name, len(deck))
            result = refined.with_deck_maps(deck)
            logger.info("%s: domain %s x %s, %s", f.name, result.u_range, result.v_range,
                        "Klein bottle" if result.is_klein else "torus")
            return result
        domain = refined
    raise DomainError(f"Deck-map detection for {f.name} did not stabilize in {max_rounds} rounds")


# ── Point maps and composition ────────────────────────────────────────────────
class PointMap:
    """A smooth map R^N → R^M with value, Jacobian (…, M, N), Hessian (…, M, N, N)."""
    out_dim: int
    ambient: str = EUCLIDEAN
    label: str = "map"

    def value(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _householder_frame(pole: np.ndarray) -> np.ndarray:
    """Proper rotation Q with Q·pole = e_last."""
    d = pole.shape[0]
    e = np.zeros(d)
    e[-1] = 1.0
    v = pole - e
    if np.linalg.norm(v) < 1e-15:
        return np.eye(d)
    H = np.eye(d) - 2.0 * np.outer(v, v) / np.dot(v, v)
    flip = np.eye(d)
    flip[0, 0] = -1.0
    return flip @ H


@dataclass(frozen=True, eq=False)
class StereographicChart(PointMap):
    n: int
    pole: np.ndarray
    rotated: bool = False
    unit_tol: float = 1e-10

    def __post_init__(self):
        pole = np.asarray(self.pole, dtype=float)
        if pole.shape != (self.n + 1,) or abs(np.linalg.norm(pole) - 1.0) > 1e-12:
            raise DomainError(f"Pole must be a unit vector in R^{self.n + 1}")
        object.__setattr__(self, "pole", pole)
        object.__setattr__(self, "frame", _householder_frame(pole))

    @property
    def out_dim(self) -> int:
        return self.n

    label = "stereographic"

    @classmethod
    def standard(cls, n: int) -> "StereographicChart":
        pole = np.zeros(n + 1)
        pole[-1] = 1.0
        return cls(n=n, pole=pole)

    @classmethod
    def for_surface(cls, f: ParamSurface, clearance: float = 1e-3, samples: int = 48,
                    seed: int = 0) -> "StereographicChart":
        """North-pole chart, rotated away when the surface comes within `clearance` of the pole."""
        chart = cls.standard(f.ambient_dim - 1)
        _, _, P = f.sample(samples, samples)
        P = P.reshape(-1, f.ambient_dim)
        if chart.clearance(P) >= clearance:
            return chart
        best = max(_pole_candidates(f.ambient_dim, seed), key=lambda c: _min_distance(P, c))
        rotated = cls(n=f.ambient_dim - 1, pole=best, rotated=True)
        logger.warning("%s passes within %.2g of the pole; rotated pole to %s (clearance %.3g)",
                       f.name, chart.clearance(P), np.round(best, 6).tolist(), rotated.clearance(P))
        return rotated

    def clearance(self, points: np.ndarray) -> float:
        return _min_distance(points, self.pole)

    def _q(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        norms = np.linalg.norm(p, axis=-1)
        if np.any(np.abs(norms - 1.0) > self.unit_tol):
            raise DomainError("Stereographic projection needs unit vectors")
        if np.any(np.linalg.norm(p - self.pole, axis=-1) <= 1e-12):
            raise DegenerateGeometryError("Stereographic projection at its pole", location=tuple(self.pole))
        return p @ self.frame.T

    def value(self, p):
        q = self._q(p)
        return q[..., :-1] / (1.0 - q[..., -1])[..., None]

    forward = value

    def inverse(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        r2 = np.sum(z * z, axis=-1)[..., None]
        q = np.concatenate([2.0 * z, r2 - 1.0], axis=-1) / (r2 + 1.0)
        return q @ self.frame

    def factor(self, p) -> np.ndarray:
        """λ with (chart)*δ = λ²·(round metric)."""
        return 1.0 / (1.0 - self._q(p)[..., -1])

    def jacobian(self, p):
        q = self._q(p)
        s = (1.0 - q[..., -1])[..., None, None]
        n = self.n
        J = np.zeros(q.shape[:-1] + (n, n + 1))
        J[..., :, :n] = np.eye(n) / s
        J[..., :, n] = q[..., :n] / s[..., 0] ** 2
        return J @ self.frame

    def hessian(self, p):
        q = self._q(p)
        s = 1.0 - q[..., -1]
        n = self.n
        H = np.zeros(q.shape[:-1] + (n, n + 1, n + 1))
        eye = np.eye(n) / (s * s)[..., None, None]
        H[..., :, :n, n] = eye
        H[..., :, n, :n] = eye
        H[..., :, n, n] = 2.0 * q[..., :n] / (s ** 3)[..., None]
        return np.einsum("...ilm,lj,mk->...ijk", H, self.frame, self.frame)


def _min_distance(points: np.ndarray, pole: np.ndarray) -> float:
    return float(np.linalg.norm(points - pole, axis=-1).min())


def _pole_candidates(dim: int, seed: int) -> List[np.ndarray]:
    eye = np.eye(dim)
    out = [s * eye[i] for i in range(dim) for s in (1.0, -1.0)]
    for i in range(dim):
        for j in range(i + 1, dim):
            for si in (1.0, -1.0):
                for sj in (1.0, -1.0):
                    out.append((si * eye[i] + sj * eye[j]) / math.sqrt(2.0))
    rng = np.random.default_rng(seed)
    for vec in rng.standard_normal((32, dim)):
        out.append(vec / np.linalg.norm(vec))
    return out


@dataclass(frozen=True, eq=False)
class SphereInversion(PointMap):
    """x ↦ c + r²(x − c)/|x − c|²."""
    center: np.ndarray
    radius: float = 1.0
    label = "inversion"

    @property
    def out_dim(self) -> int:
        return len(self.center)

    def _y(self, p):
        y = np.asarray(p, dtype=float) - np.asarray(self.center, dtype=float)
        rho = np.sum(y * y, axis=-1)
        if np.any(rho <= 1e-24):
            raise DegenerateGeometryError("Inversion at its center", location=tuple(self.center))
        return y, rho

    def value(self, p):
        y, rho = self._y(p)
        return np.asarray(self.center, dtype=float) + self.radius ** 2 * y / rho[..., None]

    def jacobian(self, p):
        y, rho = self._y(p)
        d = y.shape[-1]
        r2 = self.radius ** 2
        return r2 * (np.eye(d) / rho[..., None, None] - 2.0 * y[..., :, None] * y[..., None, :] / (rho ** 2)[..., None, None])

    def hessian(self, p):
        y, rho = self._y(p)
        d = y.shape[-1]
        eye = np.eye(d)
        r2 = self.radius ** 2
        rho2 = (rho ** 2)[..., None, None, None]
        rho3 = (rho ** 3)[..., None, None, None]
        t1 = -2.0 * eye[:, :, None] * y[..., None, None, :]
        t2 = -2.0 * (eye[:, None, :] * y[..., None, :, None] + y[..., :, None, None] * eye[None, :, :])
        t3 = 8.0 * y[..., :, None, None] * y[..., None, :, None] * y[..., None, None, :]
        return r2 * ((t1 + t2) / rho2 + t3 / rho3)


@dataclass(frozen=True, eq=False)
class Similarity(PointMap):
    """x ↦ scale·R·x + translation."""
    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    label = "similarity"

    @property
    def out_dim(self) -> int:
        return len(self.translation)

    def value(self, p):
        return self.scale * np.asarray(p, dtype=float) @ np.asarray(self.rotation).T + self.translation

    def jacobian(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(self.scale * np.asarray(self.rotation, dtype=float),
                               p.shape[:-1] + (self.out_dim, p.shape[-1]))

    def hessian(self, p):
        p = np.asarray(p, dtype=float)
        return np.zeros(p.shape[:-1] + (self.out_dim, p.shape[-1], p.shape[-1]))


def compose(f: ParamSurface, point_map: PointMap, name: Optional[str] = None) -> ParamSurface:
    """Φ∘f with (Φ∘f)_a = J f_a and (Φ∘f)_ab = J f_ab + H[f_a, f_b]."""
    def apply(J, v):
        return np.einsum("...ij,...j->...i", J, v)

    def point(x, y):
        return point_map.value(f.point_fn(x, y))

    def first(x, y):
        J = point_map.jacobian(f.point_fn(x, y))
        fx, fy = f.d1(x, y)
        return apply(J, fx), apply(J, fy)

    def second(x, y):
        p = f.point_fn(x, y)
        J, H = point_map.jacobian(p), point_map.hessian(p)
        fx, fy = f.d1(x, y)
        fxx, fxy, fyy = f.d2(x, y)

        def hess(a, b):
            return np.einsum("...ijk,...j,...k->...i", H, a, b)

        return apply(J, fxx) + hess(fx, fx), apply(J, fxy) + hess(fx, fy), apply(J, fyy) + hess(fy, fy)

    return replace(f, name=name or f"{point_map.label}({f.name})", ambient_dim=point_map.out_dim,
                   point_fn=point, d1_fn=first, d2_fn=second, ambient=point_map.ambient,
                   metadata={**f.metadata, "composed_with": point_map.label})


def stereographic(chart: StereographicChart, p) -> np.ndarray:
    return chart.forward(p)


# ── Reference surfaces ────────────────────────────────────────────────────────
def _sphere_domain() -> FundamentalDomain:
    return FundamentalDomain((0.0, _TWO_PI), (-0.5 * math.pi, 0.5 * math.pi),
                             ((_TWO_PI, 0.0), (0.0, _TWO_PI)), v_periodic=False)


def round_sphere(radius: float = 1.0) -> ParamSurface:
    """Longitude x, latitude y; Gauss–Legendre in y keeps samples off the poles."""
    if radius <= 0:
        raise DomainError(f"radius must be positive, got {radius}")
    r = float(radius)

    def point(x, y):
        return r * _stack(np.cos(x) * np.cos(y), np.sin(x) * np.cos(y), np.sin(y))

    def first(x, y):
        cx, sx, cy, sy = np.cos(x), np.sin(x), np.cos(y), np.sin(y)
        return r * _stack(-sx * cy, cx * cy, 0.0 * x), r * _stack(-cx * sy, -sx * sy, cy)

    def second(x, y):
        cx, sx, cy, sy = np.cos(x), np.sin(x), np.cos(y), np.sin(y)
        return (r * _stack(-cx * cy, -sx * cy, 0.0 * x), r * _stack(sx * sy, -cx * sy, 0.0 * x),
                r * _stack(-cx * cy, -sx * cy, -sy))

    return ParamSurface(name="sphere" if r == 1.0 else f"sphere_r{r:g}", ambient_dim=3,
                        point_fn=point, d1_fn=first, d2_fn=second, domain=_sphere_domain())


def equatorial_sphere() -> ParamSurface:
    """The totally geodesic S² = S³ ∩ {x₄ = 0}."""
    base = round_sphere(1.0)

    def pad(arr):
        return np.concatenate([arr, np.zeros(arr.shape[:-1] + (1,))], axis=-1)

    return replace(base, name="equatorial_sphere", ambient_dim=4, ambient=UNIT_SPHERE,
                   point_fn=lambda x, y: pad(base.point_fn(x, y)),
                   d1_fn=lambda x, y: tuple(pad(d) for d in base.d1_fn(x, y)),
                   d2_fn=lambda x, y: tuple(pad(d) for d in base.d2_fn(x, y)))


def flat_torus(a: float = 1.0, b: float = 1.0) -> ParamSurface:
    """(a cos x, a sin x, b cos y, b sin y) in R⁴; on S³ when a² + b² = 1."""
    def point(x, y):
        return _stack(a * np.cos(x), a * np.sin(x), b * np.cos(y), b * np.sin(y))

    def first(x, y):
        zero = 0.0 * x
        return (_stack(-a * np.sin(x), a * np.cos(x), zero, zero),
                _stack(zero, zero, -b * np.sin(y), b * np.cos(y)))

    def second(x, y):
        zero = 0.0 * x
        return (_stack(-a * np.cos(x), -a * np.sin(x), zero, zero), _stack(zero, zero, zero, zero),
                _stack(zero, zero, -b * np.cos(y), -b * np.sin(y)))

    ambient = UNIT_SPHERE if abs(a * a + b * b - 1.0) < 1e-14 else EUCLIDEAN
    domain = FundamentalDomain((0.0, _TWO_PI), (0.0, _TWO_PI), ((_TWO_PI, 0.0), (0.0, _TWO_PI)))
    return ParamSurface(name=f"flat_torus_{a:g}_{b:g}", ambient_dim=4, point_fn=point,
                        d1_fn=first, d2_fn=second, domain=domain, ambient=ambient)


def clifford_torus() -> ParamSurface:
    return lawson_tau(1, 1)


def surface_by_name(name: str, m: Optional[int] = None, k: Optional[int] = None) -> ParamSurface:
    key = name.lower()
    if key == "tau":
        return lawson_tau(int(m), int(k))
    if key == "bipolar":
        return lawson_bipolar(int(m), int(k))
    if key == "clifford":
        return clifford_torus()
    if key == "sphere":
        return round_sphere()
    if key == "equatorial-sphere":
        return equatorial_sphere()
    raise DomainError(f"Unknown surface {name!r}; expected tau, bipolar, clifford, sphere or equatorial-sphere")
