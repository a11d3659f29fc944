"""
spectral.py — Laplace–Beltrami spectra on tori and Klein bottles.

The Laplacian is discretized in divergence form on a node grid of the
covering torus:

    K = h_u h_v (D_uᵀ W_uu D_u + D_vᵀ W_vv D_v + C_uᵀ W_uv C_v + C_vᵀ W_uv C_u)
    M = diag(√det g) h_u h_v

with W the face (or cell) values of √det g · g^{ij}. Klein-bottle spectra
come from the same operator restricted to σ-invariant functions, i.e.
assembled on the σ-orbits of the nodes.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from ..errors import DegenerateGeometryError, DomainError
from .geometry import Components, MetricField, pullback_metric
from .numerics import SparseSymOperator, SpectrumResult, lanczos_smallest
from .surfaces import DeckMap, FundamentalDomain, ParamSurface

logger = logging.getLogger(__name__)

DEFAULT_REL_TOL = 5e-3
DEFAULT_ABS_FLOOR = 1e-8
_GRID_TOL = 1e-9


# ── Grids ─────────────────────────────────────────────────────────────────────
def _integral_ratio(value: float, step: float, what: str) -> int:
    ratio = value / step
    if abs(ratio - round(ratio)) > _GRID_TOL * max(1.0, abs(ratio)):
        raise DomainError(f"Grid incompatible with the domain: {what} = {ratio:.6g} steps")
    return int(round(ratio))


def _v_wrap_shift(domain: FundamentalDomain) -> float:
    """u-offset s with (s, height) in the lattice, reduced modulo the width."""
    if not domain.in_lattice((domain.width, 0.0)):
        raise DomainError(f"The u-period {domain.width:.6g} is not a lattice vector of {domain.lattice}")
    L = np.asarray(domain.lattice, dtype=float)
    for a in range(-4, 5):
        for b in range(-4, 5):
            du, dv = a * L[0] + b * L[1]
            if abs(dv - domain.height) <= _GRID_TOL * max(1.0, domain.height):
                return float(du % domain.width)
    raise DomainError(f"No lattice vector of {domain.lattice} closes the v-period {domain.height:.6g}")


@dataclass(frozen=True)
class PeriodicGrid:
    n_u: int
    n_v: int
    domain: FundamentalDomain
    klein_involution: Optional[DeckMap] = None

    def __post_init__(self):
        if self.n_u < 4 or self.n_v < 4:
            raise DomainError(f"Grid resolutions must be >= 4, got ({self.n_u}, {self.n_v})")
        if self.domain.v_periodic:
            _integral_ratio(_v_wrap_shift(self.domain), self.h_u, "lattice u-shift")
        sigma = self.klein_involution
        if sigma is not None:
            if not self.domain.v_periodic:
                raise DomainError("A Klein involution needs a periodic v direction")
            _integral_ratio(sigma.shift, self.h_u, "involution u-shift")
            _integral_ratio(sigma.offset - 2 * self.domain.v_range[0], self.h_v, "involution v-offset")

    @classmethod
    def for_metric(cls, metric: MetricField, n_u: int, n_v: Optional[int] = None, klein: bool = True) -> "PeriodicGrid":
        return cls(n_u=n_u, n_v=n_v or n_u, domain=metric.domain,
                   klein_involution=metric.domain.klein_involution if klein else None)

    @property
    def h_u(self) -> float:
        return self.domain.width / self.n_u

    @property
    def h_v(self) -> float:
        return self.domain.height / self.n_v

    @property
    def size(self) -> int:
        return self.n_u * self.n_v

    @property
    def wrap_shift(self) -> int:
        """Node offset in u picked up when crossing the top v edge (0 on rectangular lattices)."""
        if not self.domain.v_periodic:
            return 0
        return _integral_ratio(_v_wrap_shift(self.domain), self.h_u, "lattice u-shift")

    def u_nodes(self) -> np.ndarray:
        return self.domain.u_range[0] + self.h_u * np.arange(self.n_u)

    def v_nodes(self) -> np.ndarray:
        # cell-centred in v when the v direction ends at poles
        offset = 0.0 if self.domain.v_periodic else 0.5
        return self.domain.v_range[0] + self.h_v * (np.arange(self.n_v) + offset)

    def nodes(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.u_nodes(), self.v_nodes(), indexing="ij")

    def refined(self, factor: int = 2) -> "PeriodicGrid":
        return PeriodicGrid(self.n_u * factor, self.n_v * factor, self.domain, self.klein_involution)

    def coarsened(self, factor: int = 2) -> "PeriodicGrid":
        return PeriodicGrid(self.n_u // factor, self.n_v // factor, self.domain, self.klein_involution)

    def index(self, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        """Flat node index of (i, j), folding j through the lattice."""
        turns = np.floor_divide(j, self.n_v)
        i = (i - turns * self.wrap_shift) % self.n_u
        return i * self.n_v + (j - turns * self.n_v)

    def shift(self, di: int, dj: int) -> sp.csr_matrix:
        """(S f)(node) = f(node + (di, dj)) on a periodic grid."""
        i, j = np.meshgrid(np.arange(self.n_u), np.arange(self.n_v), indexing="ij")
        cols = self.index(i + di, j + dj).ravel()
        return sp.csr_matrix((np.ones(self.size), (np.arange(self.size), cols)), shape=(self.size, self.size))

    def involution_permutation(self) -> np.ndarray:
        sigma = self.klein_involution
        if sigma is None:
            return np.arange(self.size)
        di = _integral_ratio(sigma.shift, self.h_u, "involution u-shift")
        dj = _integral_ratio(sigma.offset - 2 * self.domain.v_range[0], self.h_v, "involution v-offset")
        i, j = np.meshgrid(np.arange(self.n_u), np.arange(self.n_v), indexing="ij")
        return self.index(i + di, dj - j).ravel()

    def to_dict(self) -> Dict[str, object]:
        return {"n_u": self.n_u, "n_v": self.n_v, "klein": self.klein_involution is not None,
                "wrap_shift": self.wrap_shift}


# ── Assembly ──────────────────────────────────────────────────────────────────
def _forward(n: int, periodic: bool) -> sp.csr_matrix:
    if periodic:
        return (sp.eye(n, k=1, format="csr") + sp.eye(n, k=1 - n, format="csr") - sp.eye(n, format="csr")).tocsr()
    return (sp.eye(n - 1, n, k=1) - sp.eye(n - 1, n)).tocsr()


def _average(n: int, periodic: bool) -> sp.csr_matrix:
    if periodic:
        return 0.5 * (sp.eye(n, k=1, format="csr") + sp.eye(n, k=1 - n, format="csr") + sp.eye(n, format="csr"))
    return 0.5 * (sp.eye(n - 1, n, k=1) + sp.eye(n - 1, n)).tocsr()


def _difference_operators(grid: PeriodicGrid) -> Tuple[sp.csr_matrix, ...]:
    """Face differences Du, Dv and cell differences Cu, Cv."""
    hu, hv = grid.h_u, grid.h_v
    if grid.domain.v_periodic:
        I = sp.identity(grid.size, format="csr")
        Su, Sv = grid.shift(1, 0), grid.shift(0, 1)
        Du, Dv = (Su - I) / hu, (Sv - I) / hv
        return Du, Dv, (Du @ (Sv + I) * 0.5).tocsr(), ((Su + I) @ Dv * 0.5).tocsr()
    n_u, n_v = grid.n_u, grid.n_v
    Su, Sv = _forward(n_u, True), _forward(n_v, False)
    Au, Av = _average(n_u, True), _average(n_v, False)
    Iu, Iv = sp.identity(n_u, format="csr"), sp.identity(n_v, format="csr")
    return (sp.kron(Su, Iv, format="csr") / hu, sp.kron(Iu, Sv, format="csr") / hv,
            sp.kron(Su, Av, format="csr") / hu, sp.kron(Au, Sv, format="csr") / hv)


def _coefficients(metric: MetricField, U: np.ndarray, V: np.ndarray, where: str) -> Components:
    """(a^uu, a^uv, a^vv) = √det g · g^{ij} at the given points."""
    E, F, G = metric.egf(U, V)
    det = E * G - F * F
    bad = ~(det > 0) | ~(E > 0) | ~(G > 0)
    if np.any(bad):
        idx = tuple(np.argwhere(bad)[0])
        raise DegenerateGeometryError(f"Non-positive {where} coefficient of {metric.name}",
                                      location=(float(U[idx]), float(V[idx])))
    root = np.sqrt(det)
    return G / root, -F / root, E / root


def assemble_laplacian(metric: MetricField, grid: PeriodicGrid) -> SparseSymOperator:
    """Stiffness K and lumped mass M of −Δ_g on the covering-torus grid."""
    n_u, n_v, hu, hv = grid.n_u, grid.n_v, grid.h_u, grid.h_v
    pv = grid.domain.v_periodic
    u, v = grid.u_nodes(), grid.v_nodes()
    u_face = u + 0.5 * hu
    v_face = (v + 0.5 * hv) if pv else (v[:-1] + 0.5 * hv)

    Du, Dv, Cu, Cv = _difference_operators(grid)

    a_uu = _coefficients(metric, *np.meshgrid(u_face, v, indexing="ij"), "u-face")[0]
    a_vv = _coefficients(metric, *np.meshgrid(u, v_face, indexing="ij"), "v-face")[2]
    a_uv = _coefficients(metric, *np.meshgrid(u_face, v_face, indexing="ij"), "cell")[1]

    K = Du.T @ sp.diags(a_uu.ravel()) @ Du + Dv.T @ sp.diags(a_vv.ravel()) @ Dv
    if np.any(a_uv != 0.0):
        W = sp.diags(a_uv.ravel())
        K = K + Cu.T @ W @ Cv + Cv.T @ W @ Cu
    K = (hu * hv) * K
    K = (0.5 * (K + K.T)).tocsr()

    U, V = grid.nodes()
    mass = metric.sqrt_det(U, V).ravel() * hu * hv
    logger.debug("Assembled %s on %dx%d (nnz=%d)", metric.name, n_u, n_v, K.nnz)
    return SparseSymOperator(matrix=K, mass=mass)


def orbit_projector(grid: PeriodicGrid) -> sp.csr_matrix:
    """Nodes × σ-orbits indicator matrix P."""
    perm = grid.involution_permutation()
    rep = np.minimum(np.arange(grid.size), perm)
    _, orbit = np.unique(rep, return_inverse=True)
    return sp.csr_matrix((np.ones(grid.size), (np.arange(grid.size), orbit)),
                         shape=(grid.size, int(orbit.max()) + 1))


def klein_quotient(op: SparseSymOperator, grid: PeriodicGrid) -> Tuple[SparseSymOperator, sp.csr_matrix]:
    P = orbit_projector(grid)
    K = (P.T @ op.matrix @ P).tocsr()
    K = (0.5 * (K + K.T)).tocsr()
    mass = P.T @ op.mass_vector()
    return SparseSymOperator(matrix=K, mass=np.asarray(mass).ravel()), P


def laplacian_apply(metric: MetricField, grid: PeriodicGrid, values: np.ndarray) -> np.ndarray:
    """Δ_g f ≈ M⁻¹ K f on grid nodes (non-negative spectrum convention)."""
    op = assemble_laplacian(metric, grid)
    flat = np.asarray(values, dtype=float).reshape(grid.size, -1)
    out = (op.matrix @ flat) / op.mass_vector()[:, None]
    return out.reshape(np.shape(values))


# ── Spectra ───────────────────────────────────────────────────────────────────
def multiplicity_cluster(eigenvalues: Sequence[float], rel_tol: float = DEFAULT_REL_TOL,
                         abs_floor: float = DEFAULT_ABS_FLOOR) -> List[Tuple[float, int]]:
    values = np.sort(np.asarray(eigenvalues, dtype=float), kind="stable")
    clusters: List[List[float]] = []
    for lam in values:
        if clusters and lam - clusters[-1][-1] <= max(abs_floor, rel_tol * abs(lam)):
            clusters[-1].append(float(lam))
        else:
            clusters.append([float(lam)])
    return [(float(np.mean(c)), len(c)) for c in clusters]


def _solve(metric: MetricField, grid: PeriodicGrid, count: int, tol: float, seed: int) -> SpectrumResult:
    op = assemble_laplacian(metric, grid)
    if grid.klein_involution is not None:
        quotient, P = klein_quotient(op, grid)
        result = lanczos_smallest(quotient, count, tol=tol, seed=seed)
        result.eigenvectors = P @ result.eigenvectors
    else:
        result = lanczos_smallest(op, count, tol=tol, seed=seed)
    result.metadata.update(grid.to_dict())
    result.metadata["volume"] = float(op.mass_vector().sum()) / grid.domain.sheets
    return result


def spectrum(metric: MetricField, grid: PeriodicGrid, count: int = 12, tol: float = 1e-9, seed: int = 0,
             coarse: Optional[PeriodicGrid] = None, rel_tol: float = DEFAULT_REL_TOL) -> SpectrumResult:
    """Smallest `count` eigenvalues of Δ_g; Klein-bottle spectrum when the grid carries σ.

    With `coarse` (half the resolution) the Richardson values (4λ_h − λ_2h)/3
    are added to the metadata.
    """
    result = _solve(metric, grid, count, tol, seed)
    result.clusters = multiplicity_cluster(result.eigenvalues, rel_tol)
    if coarse is not None:
        if coarse.n_u * 2 != grid.n_u or coarse.n_v * 2 != grid.n_v:
            raise DomainError("Richardson needs a coarse grid of exactly half the resolution")
        lam_c = _solve(metric, coarse, count, tol, seed).eigenvalues
        extrapolated = (4.0 * result.eigenvalues - lam_c) / 3.0
        result.metadata["coarse"] = lam_c.tolist()
        result.metadata["richardson"] = extrapolated.tolist()
    logger.info("Spectrum of %s on %dx%d%s: %s", metric.name, grid.n_u, grid.n_v,
                " (Klein quotient)" if grid.klein_involution else "",
                ", ".join(f"{v:.6g}x{m}" for v, m in result.clusters))
    return result


def cluster_members(result: SpectrumResult, index: int) -> np.ndarray:
    """Indices of the eigenvalues in cluster number `index`."""
    start = sum(m for _, m in result.clusters[:index])
    return np.arange(start, start + result.clusters[index][1])


def richardson_cluster_value(result: SpectrumResult, index: int) -> float:
    values = np.asarray(result.metadata.get("richardson", result.eigenvalues))
    return float(values[cluster_members(result, index)].mean())


def revolution_profile(metric: MetricField, n_v: int) -> Tuple[np.ndarray, np.ndarray]:
    dom = metric.domain
    v = dom.v_range[0] + dom.height * np.arange(n_v) / n_v
    A, F, B = metric.egf(np.full_like(v, dom.u_range[0]), v)
    scale = float(max(np.abs(A).max(), np.abs(B).max()))
    for u in dom.u_range[0] + dom.width * np.array([0.137, 0.389, 0.612, 0.871]):
        A2, F2, B2 = metric.egf(np.full_like(v, u), v)
        if max(np.abs(A2 - A).max(), np.abs(B2 - B).max()) > 1e-12 * scale:
            raise DomainError(f"{metric.name} is not a metric of revolution (u-dependence)")
        if np.abs(F2).max() > 1e-12 * scale:
            raise DomainError(f"{metric.name} is not a metric of revolution (g_uv != 0)")
    return A, B


def revolution_spectrum(metric: MetricField, mode_range: Iterable[int] = range(6), n_v: int = 512,
                        count: int = 12, rel_tol: float = DEFAULT_REL_TOL) -> SpectrumResult:
    """Separation of variables f = e^{iωu}φ(v) for a metric A(v)du² + B(v)dv².

    Each mode solves −(pφ')' + ω²qφ = λρφ with p = √(A/B), q = √(B/A),
    ρ = √(AB) on the periodic v circle. On a Klein bottle the involution
    (u, v) ↦ (u + s, t − v) restricts each mode to φ of parity e^{iωs}
    under v ↦ t − v.
    """
    dom = metric.domain
    if not dom.v_periodic:
        raise DomainError("revolution_spectrum needs a periodic v direction")
    s = _v_wrap_shift(dom)
    if min(s, dom.width - s) > _GRID_TOL * dom.width:
        raise DomainError(f"revolution_spectrum needs a rectangular lattice, {metric.name} has {dom.lattice}")
    h = dom.height / n_v
    v = dom.v_range[0] + h * np.arange(n_v)
    A, B = revolution_profile(metric, n_v)
    A_half, _, B_half = metric.egf(np.full(n_v, dom.u_range[0]), v + 0.5 * h)
    p_half = np.sqrt(A_half / B_half)
    q, rho = np.sqrt(B / A), np.sqrt(A * B)
    S = _forward(n_v, True).toarray()
    stiff = S.T @ np.diag(p_half) @ S / h

    sigma = dom.klein_involution
    reflect = None
    if sigma is not None:
        dj = _integral_ratio(sigma.offset - 2 * dom.v_range[0], h, "v-offset")
        reflect = (dj - np.arange(n_v)) % n_v
        half_turns = _integral_ratio(2.0 * sigma.shift, dom.width, "u-shift")

    found: List[Tuple[float, int, int]] = []
    for N in mode_range:
        omega = 2.0 * math.pi * N / dom.width
        K = stiff + h * omega * omega * np.diag(q)
        M = h * rho
        if reflect is not None:
            parity = -1 if (N * half_turns) % 2 else 1
            P = _parity_basis(reflect, parity)
            K, M = P.T @ K @ P, P.T @ (M[:, None] * P)
        else:
            M = np.diag(M)
        values = scipy.linalg.eigh(K, M, eigvals_only=True)
        mult = 1 if N == 0 else 2
        found.extend((float(lam), int(N), mult) for lam in values[:count])

    found.sort()
    eigenvalues: List[float] = []
    modes: List[Tuple[float, int, int]] = []
    for lam, N, mult in found:
        if len(eigenvalues) >= count:
            break
        eigenvalues.extend([lam] * mult)
        modes.append((lam, N, mult))
    eigenvalues = np.asarray(eigenvalues[:count])
    result = SpectrumResult(eigenvalues=eigenvalues, eigenvectors=np.zeros((0, len(eigenvalues))),
                            residuals=np.zeros(len(eigenvalues)),
                            metadata={"n_v": n_v, "modes": modes, "klein": sigma is not None})
    result.clusters = multiplicity_cluster(eigenvalues, rel_tol)
    return result


def _parity_basis(reflect: np.ndarray, parity: int) -> np.ndarray:
    n = len(reflect)
    cols = []
    for j in range(n):
        r = int(reflect[j])
        if r < j:
            continue
        if r == j:
            if parity > 0:
                col = np.zeros(n)
                col[j] = 1.0
                cols.append(col)
            continue
        col = np.zeros(n)
        col[j], col[r] = 1.0, float(parity)
        cols.append(col)
    return np.stack(cols, axis=1)


# ── Immersion checks ──────────────────────────────────────────────────────────
def takahashi_residual(f: ParamSurface, grid: PeriodicGrid, eigenvalue: float = 2.0) -> np.ndarray:
    """‖Δf^i − λ f^i‖ / ‖f^i‖ per ambient coordinate (mass-weighted L²)."""
    metric = pullback_metric(f)
    op = assemble_laplacian(metric, grid)
    U, V = grid.nodes()
    coords = f.eval(U, V).reshape(grid.size, f.ambient_dim)
    mass = op.mass_vector()
    # rows at coordinate poles carry no area
    live = mass > 1e-12 * mass.max()
    if not np.all(live):
        logger.debug("Takahashi residual of %s: masking %d zero-area rows", f.name, int(np.count_nonzero(~live)))
    lap = (op.matrix @ coords)[live] / mass[live, None]
    mass, coords = mass[live], coords[live]
    num = np.sqrt(mass @ (lap - eigenvalue * coords) ** 2)
    den = np.sqrt(mass @ coords ** 2)
    out = np.zeros(f.ambient_dim)
    nonzero = den > 1e-14
    out[nonzero] = num[nonzero] / den[nonzero]
    logger.info("Takahashi residuals of %s on %dx%d: %s", f.name, grid.n_u, grid.n_v,
                np.array2string(out, precision=3))
    return out


def lambda1_volume(metric: MetricField, grid: PeriodicGrid, count: int = 6, tol: float = 1e-9, seed: int = 0) -> float:
    result = _solve(metric, grid, count, tol, seed)
    return float(result.eigenvalues[1] * result.metadata["volume"])


def eigenmap_radius(eigenvalue: float, dim: int = 2) -> float:
    """Radius of the sphere carrying an isometric eigenmap: √(dim/λ)."""
    if eigenvalue <= 0:
        raise DomainError(f"Eigenvalue must be positive, got {eigenvalue}")
    return math.sqrt(dim / eigenvalue)


def weyl_ratio(eigenvalues: Sequence[float], area: float, upto: int = 30) -> float:
    """N(λ)/(Area·λ/4π) at λ midway between the upto-th and next eigenvalue."""
    values = np.sort(np.asarray(eigenvalues, dtype=float))
    if len(values) <= upto:
        raise DomainError(f"Need more than {upto} eigenvalues, got {len(values)}")
    lam = 0.5 * (values[upto] + values[upto - 1]) if upto > 0 else values[0]
    counted = int(np.count_nonzero(values < lam))
    return counted / (area * lam / (4.0 * math.pi))


# ── Reference metrics and deformations ────────────────────────────────────────
def flat_metric(a: float = 1.0, b: float = 1.0) -> MetricField:
    """a²du² + b²dv² on [0, 2π)²."""
    domain = FundamentalDomain((0.0, 2 * math.pi), (0.0, 2 * math.pi), ((2 * math.pi, 0.0), (0.0, 2 * math.pi)))
    return MetricField(name=f"flat_{a:g}x{b:g}", domain=domain,
                       components=lambda u, v: (a * a + 0.0 * u, 0.0 * u, b * b + 0.0 * u),
                       metadata={"revolution": True})


def sphere_metric() -> MetricField:
    """Round S² in longitude/latitude: cos²v du² + dv²."""
    domain = FundamentalDomain((0.0, 2 * math.pi), (-0.5 * math.pi, 0.5 * math.pi),
                               ((2 * math.pi, 0.0), (0.0, 2 * math.pi)), v_periodic=False)
    return MetricField(name="round_sphere", domain=domain,
                       components=lambda u, v: (np.cos(v) ** 2, 0.0 * u, 1.0 + 0.0 * u))


TensorField = Callable[[np.ndarray, np.ndarray], Components]


def random_deformation(metric: MetricField, seed: int = 0, harmonics: int = 3) -> TensorField:
    """Seeded trigonometric symmetric 2-tensor, invariant under the domain's deck maps."""
    dom = metric.domain
    rng = np.random.default_rng(seed)
    wu, wv = 2 * math.pi / dom.width, 2 * math.pi / dom.height
    orders = [(p, q) for p in range(harmonics + 1) for q in range(harmonics + 1)]
    coeffs = rng.standard_normal((3, len(orders), 4))
    damping = np.array([1.0 / (1.0 + p + q) ** 2 for p, q in orders])

    def raw(u, v):
        out = []
        for c in coeffs:
            total = 0.0 * u
            for (p, q), (a, b, cc, d), w in zip(orders, c, damping):
                cu, su = np.cos(p * wu * u), np.sin(p * wu * u)
                cv, sv = np.cos(q * wv * v), np.sin(q * wv * v)
                total = total + w * (a * cu * cv + b * cu * sv + cc * su * cv + d * su * sv)
            out.append(total)
        return tuple(out)

    def field_(u, v):
        hE, hF, hG = raw(u, v)
        for sigma in dom.deck_maps:
            su_, sv_ = sigma.apply(u, v)
            sE, sF, sG = raw(su_, sv_)
            hE, hF, hG = 0.5 * (hE + sE), 0.5 * (hF + sigma.sign * sF), 0.5 * (hG + sG)
        return hE, hF, hG

    return field_


def deformed_metric(metric: MetricField, h: TensorField, t: float) -> MetricField:
    def comps(u, v):
        E, F, G = metric.egf(u, v)
        hE, hF, hG = h(u, v)
        return E + t * hE, F + t * hF, G + t * hG

    return MetricField(name=f"{metric.name}+{t:g}h", domain=metric.domain, components=comps)


def _grid_integral(grid: PeriodicGrid, values: np.ndarray) -> float:
    return float(values.sum()) * grid.h_u * grid.h_v / grid.domain.sheets


def normalize_deformation(metric: MetricField, h: TensorField, grid: PeriodicGrid) -> Optional[TensorField]:
    """Remove the trace mean (volume-preserving to first order) and scale to unit L²(g) norm.

    Returns None when nothing is left, i.e. h was a pure rescaling of g.
    """
    U, V = grid.nodes()
    E, F, G = metric.egf(U, V)
    root = metric.sqrt_det(U, V)
    det = root * root
    hE, hF, hG = h(U, V)
    trace = (G * hE - 2 * F * hF + E * hG) / det
    volume = _grid_integral(grid, root)
    c = _grid_integral(grid, trace * root) / (2.0 * volume)
    pE, pF, pG = hE - c * E, hF - c * F, hG - c * G
    # |h|²_g = tr(g⁻¹ h g⁻¹ h)
    a, b, d = (G * pE - F * pF) / det, (G * pF - F * pG) / det, (E * pG - F * pF) / det
    b2 = (E * pF - F * pE) / det
    norm2 = _grid_integral(grid, (a * a + 2 * b * b2 + d * d) * root) / volume
    scale_ref = float(np.sqrt(np.mean(hE ** 2 + 2 * hF ** 2 + hG ** 2))) or 1.0
    if norm2 <= (1e-12 * scale_ref) ** 2:
        return None
    s = 1.0 / math.sqrt(norm2)

    def projected(u, v):
        gE, gF, gG = metric.egf(u, v)
        qE, qF, qG = h(u, v)
        return s * (qE - c * gE), s * (qF - c * gF), s * (qG - c * gG)

    return projected


@dataclass
class ExtremalityProbe:
    d_minus: float
    d_plus: float
    slopes: List[float] = field(default_factory=list)
    cluster: List[float] = field(default_factory=list)
    trivial: bool = False

    @property
    def product(self) -> float:
        return self.d_minus * self.d_plus

    def extremal(self, rel: float = 1e-4, floor: float = 1e-8) -> bool:
        return self.product <= rel * abs(self.d_minus) * abs(self.d_plus) + floor


def _first_cluster(metric: MetricField, grid: PeriodicGrid, count: int, tol: float, seed: int,
                   cluster_tol: float) -> Tuple[SpectrumResult, np.ndarray]:
    """Solve until the λ₁ cluster is followed by at least one computed eigenvalue."""
    limit = max(count, grid.size // 4)
    while True:
        result = _solve(metric, grid, count, tol, seed)
        clusters = multiplicity_cluster(result.eigenvalues, cluster_tol)
        if len(clusters) >= 3:
            start = clusters[0][1]
            return result, np.arange(start, start + clusters[1][1])
        if count >= limit:
            raise DomainError(f"λ₁ cluster of {metric.name} does not close within {count} eigenvalues")
        count = min(2 * count, limit)


def extremality_probe(metric: MetricField, h: TensorField, t_max: float = 1e-2, grid: Optional[PeriodicGrid] = None,
                      count: int = 8, tol: float = 1e-9, seed: int = 0, cluster_tol: float = 2e-2) -> ExtremalityProbe:
    """One-sided derivatives of the volume-normalized λ₁ along g + t·h.

    The discrete λ₁ cluster is treated as one degenerate eigenspace: with U
    its M-orthonormal basis and K', M' central differences (step t_max) of
    the assembled operators, the branch slopes are the eigenvalues of
    Uᵀ(K' − λM')U plus the volume term λ·V'/V. λ₁ leaves t = 0 along the
    smallest slope for t > 0 and along the largest for t < 0.
    """
    grid = grid or PeriodicGrid.for_metric(metric, 48)
    direction = normalize_deformation(metric, h, grid)
    if direction is None:
        return ExtremalityProbe(0.0, 0.0, trivial=True)

    base, members = _first_cluster(metric, grid, count, tol, seed, cluster_tol)
    U = base.eigenvectors[:, members]
    lam = base.eigenvalues[members]
    plus = assemble_laplacian(deformed_metric(metric, direction, t_max), grid)
    minus = assemble_laplacian(deformed_metric(metric, direction, -t_max), grid)
    dK = (plus.matrix - minus.matrix) / (2.0 * t_max)
    dM = (plus.mass_vector() - minus.mass_vector()) / (2.0 * t_max)

    A = U.T @ (dK @ U)
    B = U.T @ (dM[:, None] * U)
    S = A - 0.5 * (lam[:, None] * B + B * lam[None, :])
    volume = float(assemble_laplacian(metric, grid).mass_vector().sum())
    slopes = scipy.linalg.eigvalsh(0.5 * (S + S.T)) + float(lam.mean()) * float(dM.sum()) / volume

    probe = ExtremalityProbe(d_minus=float(slopes.max()), d_plus=float(slopes.min()),
                             slopes=slopes.tolist(), cluster=lam.tolist())
    logger.debug("Extremality probe on %s: cluster %d, D- = %.4g, D+ = %.4g", metric.name, len(members),
                 probe.d_minus, probe.d_plus)
    return probe
