"""
numerics.py — Shared numerical kernels.

  QuadratureRule       Gauss–Legendre and periodic trapezoid rules
  elliptic_E           complete elliptic integral of the 2nd kind (AGM)
  integrate_periodic_2d / integrate_grid
  sym_eigen_dense      dense symmetric eigendecomposition
  singular_values      SVD helper
  SparseSymOperator    sparse symmetric (optionally generalized) operator
  lanczos_smallest     shift-invert block Lanczos, full reorthogonalization

All arithmetic is float64.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.integrate
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ..errors import ConvergenceError, DomainError, NonFiniteSampleError

logger = logging.getLogger(__name__)

_AGM_MAX_STEPS = 64
_BREAKDOWN_TOL = 1e-10

Rectangle = Tuple[float, float, float, float]


# ── Quadrature ────────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    kind: str
    interval: Tuple[float, float]

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))

    @property
    def length(self) -> float:
        return self.interval[1] - self.interval[0]


def gauss_legendre(n: int, a: float = -1.0, b: float = 1.0) -> QuadratureRule:
    if n < 1:
        raise DomainError(f"Gauss–Legendre rule needs n >= 1, got {n}")
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (b - a)
    return QuadratureRule(nodes=half * x + 0.5 * (a + b), weights=half * w,
                          kind="gauss-legendre", interval=(a, b))


def periodic_trapezoid(n: int, a: float = 0.0, b: float = 2 * math.pi,
                       offset: float = 0.0) -> QuadratureRule:
    """Equal weights on n nodes a + (i + offset)·h, h = (b - a)/n."""
    if n < 1:
        raise DomainError(f"Trapezoid rule needs n >= 1, got {n}")
    h = (b - a) / n
    nodes = a + (np.arange(n) + offset) * h
    return QuadratureRule(nodes=nodes, weights=np.full(n, h),
                          kind="periodic-trapezoid", interval=(a, b))


def _rect(domain: Union[Rectangle, Any]) -> Rectangle:
    if hasattr(domain, "u_range"):
        return (domain.u_range[0], domain.u_range[1], domain.v_range[0], domain.v_range[1])
    u0, u1, v0, v1 = domain
    return float(u0), float(u1), float(v0), float(v1)


def _check_finite(values: np.ndarray, U: np.ndarray, V: np.ndarray) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        idx = np.argwhere(bad)[0]
        i, j = int(idx[0]), int(idx[1])
        raise NonFiniteSampleError(
            f"Non-finite integrand sample ({int(bad.sum())} total), first at grid index ({i}, {j})",
            location=(float(U[i, j]), float(V[i, j])),
        )


def integrate_grid(f: Callable[[np.ndarray, np.ndarray], np.ndarray],
                   u_rule: QuadratureRule, v_rule: QuadratureRule) -> float:
    """Tensor-product quadrature of f(U, V) with U varying along axis 0."""
    U, V = np.meshgrid(u_rule.nodes, v_rule.nodes, indexing="ij")
    values = np.asarray(f(U, V), dtype=float)
    if values.shape != U.shape:
        values = np.broadcast_to(values, U.shape)
    _check_finite(values, U, V)
    # fixed summation order: rows, then the row totals
    return float(np.dot(u_rule.weights, values @ v_rule.weights))


def integrate_periodic_2d(f: Callable[[np.ndarray, np.ndarray], np.ndarray],
                          domain: Union[Rectangle, Any], n_u: int, n_v: int) -> float:
    if n_u < 4 or n_v < 4:
        raise DomainError(f"Resolutions must be >= 4, got ({n_u}, {n_v})")
    u0, u1, v0, v1 = _rect(domain)
    return integrate_grid(f, periodic_trapezoid(n_u, u0, u1), periodic_trapezoid(n_v, v0, v1))


# ── Elliptic integral ─────────────────────────────────────────────────────────
def _check_modulus(k: float) -> float:
    k = float(k)
    if not (0.0 <= k <= 1.0):
        raise DomainError(f"Elliptic modulus must lie in [0, 1], got {k!r}")
    return k


def elliptic_E(k: float) -> float:
    """E(k) = ∫₀^{π/2} √(1 − k² sin²θ) dθ by the arithmetic–geometric mean."""
    k = _check_modulus(k)
    if k == 1.0:
        return 1.0
    a, b, c = 1.0, math.sqrt((1.0 - k) * (1.0 + k)), k
    power = 0.5
    total = power * c * c
    for _ in range(_AGM_MAX_STEPS):
        if abs(c) <= 1e-17 * a:
            break
        c = 0.5 * (a - b)
        a, b = 0.5 * (a + b), math.sqrt(a * b)
        power *= 2.0
        total += power * c * c
    return (math.pi / (2.0 * a)) * (1.0 - total)


def elliptic_E_quadrature(k: float) -> float:
    k = _check_modulus(k)
    value, _ = scipy.integrate.quad(
        lambda t: math.sqrt(1.0 - k * k * math.sin(t) ** 2), 0.0, 0.5 * math.pi,
        epsabs=1e-15, epsrel=1e-14, limit=200,
    )
    return float(value)


# ── Dense linear algebra ──────────────────────────────────────────────────────
@dataclass(frozen=True)
class EigenPairs:
    values: np.ndarray
    vectors: np.ndarray


def sym_eigen_dense(A: np.ndarray, sym_tol: float = 1e-12) -> EigenPairs:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError(f"Expected a square matrix, got shape {A.shape}")
    scale = max(float(np.abs(A).max(initial=0.0)), 1.0)
    if np.abs(A - A.T).max(initial=0.0) > sym_tol * scale:
        raise DomainError("Matrix is not symmetric within tolerance")
    values, vectors = np.linalg.eigh(0.5 * (A + A.T))
    return EigenPairs(values=values, vectors=vectors)


def singular_values(A: np.ndarray) -> np.ndarray:
    return np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)


def svd(A: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return np.linalg.svd(np.asarray(A, dtype=float), full_matrices=False)


# ── Sparse operator ───────────────────────────────────────────────────────────
@dataclass(frozen=True)
class SparseSymOperator:
    matrix: sp.csr_matrix
    mass: Optional[np.ndarray] = None

    def __post_init__(self):
        A = self.matrix
        if A.shape[0] != A.shape[1]:
            raise DomainError(f"Operator must be square, got {A.shape}")
        if (A != A.T).nnz:
            raise DomainError("Stored entries are not exactly symmetric")
        if self.mass is not None:
            m = np.asarray(self.mass, dtype=float)
            if m.shape != (A.shape[0],) or not np.all(m > 0):
                raise DomainError("Mass weights must be a positive vector of matching size")

    @classmethod
    def from_entries(cls, rows: Sequence[int], cols: Sequence[int], vals: Sequence[float],
                     dimension: int, mass: Optional[np.ndarray] = None) -> "SparseSymOperator":
        A = sp.coo_matrix((vals, (rows, cols)), shape=(dimension, dimension)).tocsr()
        A.sum_duplicates()
        return cls(matrix=A, mass=None if mass is None else np.asarray(mass, dtype=float))

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def mass_vector(self) -> np.ndarray:
        return np.ones(self.dimension) if self.mass is None else np.asarray(self.mass, dtype=float)

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def dense_generalized_eigenvalues(self) -> np.ndarray:
        """Oracle path: all eigenvalues of A v = λ M v by dense LAPACK."""
        d = 1.0 / np.sqrt(self.mass_vector())
        B = d[:, None] * self.to_dense() * d[None, :]
        return np.linalg.eigvalsh(0.5 * (B + B.T))


# ── Spectrum container ────────────────────────────────────────────────────────
@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    clusters: List[Tuple[float, int]] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def count(self) -> int:
        return int(len(self.eigenvalues))


def _orthonormal_block(Z: np.ndarray, V: Optional[np.ndarray]) -> np.ndarray:
    """Orthonormalize Z against V (twice) and itself; drop dependent columns."""
    for _ in range(2):
        if V is not None and V.shape[1]:
            Z = Z - V @ (V.T @ Z)
    if Z.shape[1] == 0:
        return Z
    Q, R = np.linalg.qr(Z)
    keep = np.abs(np.diag(R)) > _BREAKDOWN_TOL * max(1.0, float(np.abs(R).max(initial=0.0)))
    Q = Q[:, keep]
    if V is not None and V.shape[1] and Q.shape[1]:
        Q = Q - V @ (V.T @ Q)
        Q, _ = np.linalg.qr(Q)
    return Q


def _relative_residuals(B: sp.csr_matrix, ritz: np.ndarray, lam: np.ndarray, norm_b: float) -> np.ndarray:
    """‖Av − λMv‖_{M⁻¹} / (‖v‖_M · λ_max), with λ_max the top of the computed window."""
    scale = float(np.abs(lam).max()) or norm_b
    return np.linalg.norm(B @ ritz - ritz * lam, axis=0) / scale


def lanczos_smallest(op: SparseSymOperator, count: int, tol: float = 1e-9, seed: int = 0,
                     sigma: Optional[float] = None, max_basis: Optional[int] = None) -> SpectrumResult:
    """Smallest eigenpairs of A v = λ M v (M diagonal).

    Works on B = M^{-1/2} A M^{-1/2} with the shift-invert operator
    (B − σ)^{-1}, σ slightly below zero. A random starting block of width
    `count` lets multiple eigenvalues come out with their full
    multiplicity; every new block is reorthogonalized against the whole
    basis and the Ritz pairs come from an explicit Rayleigh–Ritz step.
    Returned vectors are M-orthonormal.
    """
    n = op.dimension
    if count < 1 or count > n:
        raise DomainError(f"count must lie in [1, {n}], got {count}")
    if 4 * count > n:
        logger.warning("Lanczos count=%d exceeds dimension/4 (n=%d); solving anyway.", count, n)

    d = 1.0 / np.sqrt(op.mass_vector())
    D = sp.diags(d)
    B = (D @ op.matrix @ D).tocsr()
    B = (0.5 * (B + B.T)).tocsr()
    norm_b = float(abs(B).sum(axis=1).max()) or 1.0
    shift = -max(1e-6 * norm_b, 1e-12) if sigma is None else float(sigma)
    lu = splu((B - shift * sp.identity(n, format="csr")).tocsc())

    width = min(n, max(count, 2))
    budget = min(n, max_basis or max(20 * width, 200))
    inner_tol = 0.1 * tol
    rng = np.random.default_rng(seed)

    V = _orthonormal_block(rng.standard_normal((n, width)), None)
    AV = lu.solve(V)
    theta = np.zeros(0)
    ritz = np.zeros((n, 0))
    res = np.full(count, np.inf)
    steps = 0
    while True:
        steps += 1
        H = V.T @ AV
        vals, S = np.linalg.eigh(0.5 * (H + H.T))
        top = min(count, len(vals))
        theta = vals[::-1][:top]
        Sk = S[:, ::-1][:, :top]
        ritz = V @ Sk
        R = AV @ Sk - ritz * theta
        res = np.linalg.norm(R, axis=0) / np.abs(theta)
        if top == count and np.all(res <= inner_tol):
            if np.all(_relative_residuals(B, ritz, shift + 1.0 / theta, norm_b) <= tol):
                break
            inner_tol *= 0.1
        if V.shape[1] >= budget:
            if V.shape[1] < n or top < count:
                raise ConvergenceError(
                    f"Lanczos did not converge within a basis of {V.shape[1]} vectors",
                    best=res.tolist(),
                )
            break
        Z = AV[:, -width:]
        Z = _orthonormal_block(Z, V)
        if Z.shape[1] == 0:
            Z = _orthonormal_block(rng.standard_normal((n, width)), V)
        Z = Z[:, : max(0, budget - V.shape[1])]
        if Z.shape[1] == 0:
            continue
        V = np.hstack([V, Z])
        AV = np.hstack([AV, lu.solve(Z)])

    lam = shift + 1.0 / theta
    order = np.argsort(lam, kind="stable")
    lam, ritz = lam[order], ritz[:, order]
    true_res = _relative_residuals(B, ritz, lam, norm_b)
    if np.any(true_res > tol):
        raise ConvergenceError(
            f"Lanczos residuals above tolerance {tol:g}: max {true_res.max():.3g}",
            best=true_res.tolist(),
        )
    logger.debug("Lanczos n=%d count=%d basis=%d blocks=%d", n, count, V.shape[1], steps)
    return SpectrumResult(
        eigenvalues=lam,
        eigenvectors=d[:, None] * ritz,
        residuals=true_res,
        metadata={"dimension": n, "basis": int(V.shape[1]), "shift": shift, "seed": seed},
    )
