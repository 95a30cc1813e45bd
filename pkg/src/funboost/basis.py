"""B-spline bases, difference penalties, tensor products and df calibration.

Design matrices come in two shapes. :class:`KroneckerDesign` keeps the
covariate factor (N x Kx) and the time factor (G x Ky) apart, so matrix-vector
products never materialize the (N*G) x (Kx*Ky) matrix. :class:`DenseDesign`
stores the full matrix for bases that vary with time (historical and
concurrent effects).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import (
    DimensionError,
    EmptyBasisError,
    InfeasibleDfError,
    RangeError,
    SingularSystemError,
)


@dataclass(frozen=True)
class SplineBasisDef:
    """Degree-``degree`` B-spline basis with ``n_basis`` functions on [lower, upper].

    Knots are equally spaced: ``n_basis - degree + 1`` of them span the range
    and ``degree`` more are appended on each side.
    """

    degree: int
    n_basis: int
    lower: float
    upper: float

    def __post_init__(self):
        if self.degree < 0:
            raise DimensionError("spline degree must be >= 0")
        if self.n_basis < self.degree + 1:
            raise DimensionError(
                f"need n_basis >= degree + 1, got n_basis={self.n_basis}, degree={self.degree}"
            )
        if not self.upper > self.lower:
            raise DimensionError(f"empty spline range [{self.lower}, {self.upper}]")

    @property
    def knots(self) -> np.ndarray:
        n_inner = self.n_basis - self.degree + 1
        h = (self.upper - self.lower) / (n_inner - 1)
        return self.lower + h * np.arange(-self.degree, n_inner + self.degree)

    def to_dict(self) -> dict:
        return {"degree": self.degree, "n_basis": self.n_basis,
                "lower": self.lower, "upper": self.upper}

    @classmethod
    def from_dict(cls, d) -> "SplineBasisDef":
        return cls(int(d["degree"]), int(d["n_basis"]), float(d["lower"]), float(d["upper"]))


def eval_bspline_basis(spec: SplineBasisDef, points) -> np.ndarray:
    """Evaluate all basis functions at ``points`` by the Cox-de Boor recursion."""
    x = np.atleast_1d(np.asarray(points, dtype=float)).ravel()
    a, b = spec.lower, spec.upper
    slack = 1e-12 * (b - a)
    if np.any(x < a - slack) or np.any(x > b + slack) or not np.all(np.isfinite(x)):
        bad = x[(x < a - slack) | (x > b + slack) | ~np.isfinite(x)]
        raise RangeError(f"points {bad[:5].tolist()} outside spline range [{a}, {b}]")
    x = np.clip(x, a, b)
    t = spec.knots
    l, K = spec.degree, spec.n_basis
    # degree 0: indicator of [t_i, t_{i+1}); the right end belongs to the last span
    idx = np.searchsorted(t, x, side="right") - 1
    idx = np.minimum(idx, K - 1)
    B = np.zeros((x.size, K + l))
    B[np.arange(x.size), idx] = 1.0
    for k in range(1, l + 1):
        n_fun = K + l - k
        left = (x[:, None] - t[None, :n_fun]) / (t[k:k + n_fun] - t[:n_fun])[None, :]
        right = (t[None, k + 1:k + 1 + n_fun] - x[:, None]) / (
            t[k + 1:k + 1 + n_fun] - t[1:1 + n_fun])[None, :]
        B = left * B[:, :n_fun] + right * B[:, 1:n_fun + 1]
    return B


def difference_matrix(K: int, d: int) -> np.ndarray:
    if d < 0:
        raise DimensionError("difference order must be >= 0")
    if d >= K:
        raise DimensionError(f"difference order {d} needs more than {K} coefficients")
    return np.diff(np.eye(K), n=d, axis=0)


def difference_penalty(K: int, d: int) -> np.ndarray:
    """D'D for the ``d``-th order difference operator D ((K-d) x K)."""
    if d < 1:
        raise DimensionError("difference penalty order must be >= 1")
    D = difference_matrix(K, d)
    return D.T @ D


def row_tensor(A, B) -> np.ndarray:
    """Row-wise Kronecker product: row i equals kron(A[i], B[i])."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[0] != B.shape[0]:
        raise DimensionError(f"row tensor needs equal row counts, got {A.shape[0]} and {B.shape[0]}")
    return (A[:, :, None] * B[:, None, :]).reshape(A.shape[0], -1)


class KroneckerDesign:
    """Lazy (N*G) x (Kx*Ky) design ``kron(Bx, By)``.

    Rows are ordered curve-major (row ``i*G + g``) and coefficients
    covariate-major, so a coefficient vector reshapes to a (Kx, Ky) matrix.
    """

    def __init__(self, Bx, By):
        self.Bx = np.atleast_2d(np.asarray(Bx, dtype=float))
        self.By = np.atleast_2d(np.asarray(By, dtype=float))
        self.n_curves, self.kx = self.Bx.shape
        self.n_points, self.ky = self.By.shape
        self.n_coef = self.kx * self.ky

    @property
    def shape(self):
        return (self.n_curves * self.n_points, self.n_coef)

    def surface(self, theta) -> np.ndarray:
        """Fitted values as an N x G matrix."""
        return self.Bx @ (np.reshape(theta, (self.kx, self.ky)) @ self.By.T)

    def matvec(self, theta) -> np.ndarray:
        return self.surface(theta).ravel()

    def crossprod(self, U, weights=None) -> np.ndarray:
        """B' vec(U) for an N x G residual matrix, optionally curve-weighted."""
        U = np.reshape(U, (self.n_curves, self.n_points))
        Bx = self.Bx if weights is None else self.Bx * weights[:, None]
        return ((Bx.T @ U) @ self.By).ravel()

    def gram(self, weights=None) -> np.ndarray:
        Bx = self.Bx if weights is None else self.Bx * weights[:, None]
        return np.kron(Bx.T @ self.Bx, self.By.T @ self.By)

    def dense(self) -> np.ndarray:
        return np.kron(self.Bx, self.By)

    def take(self, idx) -> "KroneckerDesign":
        return KroneckerDesign(self.Bx[idx], self.By)


class DenseDesign:
    """Materialized (N*G) x K design with curve-major rows."""

    def __init__(self, X, n_curves: int, n_points: int):
        self.X = np.asarray(X, dtype=float)
        self.n_curves, self.n_points = n_curves, n_points
        if self.X.shape[0] != n_curves * n_points:
            raise DimensionError(f"dense design has {self.X.shape[0]} rows, expected {n_curves * n_points}")
        self.n_coef = self.X.shape[1]

    @property
    def shape(self):
        return self.X.shape

    def surface(self, theta) -> np.ndarray:
        return (self.X @ np.asarray(theta, dtype=float)).reshape(self.n_curves, self.n_points)

    def matvec(self, theta) -> np.ndarray:
        return self.X @ np.asarray(theta, dtype=float)

    def crossprod(self, U, weights=None) -> np.ndarray:
        u = np.reshape(U, (self.n_curves, self.n_points))
        if weights is not None:
            u = u * weights[:, None]
        return self.X.T @ u.ravel()

    def gram(self, weights=None) -> np.ndarray:
        if weights is None:
            return self.X.T @ self.X
        w = np.repeat(weights, self.n_points)
        return (self.X * w[:, None]).T @ self.X

    def dense(self) -> np.ndarray:
        return self.X

    def take(self, idx) -> "DenseDesign":
        X3 = self.X.reshape(self.n_curves, self.n_points, -1)[np.asarray(idx)]
        return DenseDesign(X3.reshape(-1, self.n_coef), X3.shape[0], self.n_points)


def kronecker_design(Bx, By, lazy: bool = False):
    """Design for a time-constant covariate basis on a common grid."""
    design = KroneckerDesign(Bx, By)
    return design if lazy else design.dense()


def orthogonalize(B_full, constraints, tol: float = 1e-9):
    """Constrain ``B_full`` to be orthogonal to the columns of ``constraints``.

    Returns ``(Z, B_full @ Z)`` where ``Z`` spans the null space of
    ``constraints' B_full`` with orthonormal columns. Linearly dependent
    constraint columns are pruned by pivoted QR.
    """
    B_full = np.atleast_2d(np.asarray(B_full, dtype=float))
    constraints = np.asarray(constraints, dtype=float)
    if constraints.ndim == 1:
        constraints = constraints[:, None]
    if constraints.shape[0] != B_full.shape[0]:
        raise DimensionError("constraints and basis need the same number of rows")
    K = B_full.shape[1]
    C = B_full.T @ constraints
    if not np.any(C):
        Z = np.eye(K)
        return Z, B_full @ Z
    Q, R, _ = sla.qr(C, pivoting=True, mode="full")
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * diag[0]))
    if rank >= K:
        raise EmptyBasisError(f"constraints of rank {rank} leave nothing of a {K}-column basis")
    Z = Q[:, rank:]
    return Z, B_full @ Z


def _rank(gram, tol=1e-10) -> int:
    ev = np.linalg.eigvalsh((gram + gram.T) / 2)
    return int(np.sum(ev > tol * max(ev.max(), 1e-300)))


def hat_trace(gram, penalty, lam: float) -> float:
    """trace(B (B'B + lam P)^-1 B') computed from B'B without B."""
    gram = np.asarray(gram, dtype=float)
    A = gram + lam * np.asarray(penalty, dtype=float)
    sol, *_ = np.linalg.lstsq(A, gram, rcond=None)
    return float(np.trace(sol))


def _trace_curve(gram, penalty, tol: float = 1e-10):
    """Return (lam -> hat trace, dimension of the unpenalized subspace).

    Works in the range of ``gram``: directions the data cannot see are
    profiled out of the penalty (Schur complement), so a rank-deficient gram
    gives the same trace as the pseudo-inverse fit.
    """
    gram = (gram + gram.T) / 2
    penalty = (penalty + penalty.T) / 2
    ev, U = np.linalg.eigh(gram)
    keep = ev > tol * max(ev.max(), 1e-300)
    Ur, Uo, S = U[:, keep], U[:, ~keep], ev[keep]
    P = Ur.T @ penalty @ Ur
    if Uo.shape[1]:
        Pro = Ur.T @ penalty @ Uo
        P = P - Pro @ np.linalg.pinv(Uo.T @ penalty @ Uo, hermitian=True) @ Pro.T
    isq = 1.0 / np.sqrt(S)
    s = np.clip(np.linalg.eigvalsh(isq[:, None] * P * isq[None, :]), 0.0, None)
    pe = np.linalg.eigvalsh(P) if P.size else np.zeros(0)
    pscale = max(np.abs(np.linalg.eigvalsh(penalty)).max(initial=0.0), 1e-300)
    null_dim = int(np.sum(pe <= 1e-9 * pscale))
    return (lambda lam: float(np.sum(1.0 / (1.0 + lam * s)))), null_dim


def null_space_dim(gram, penalty) -> int:
    return _trace_curve(np.asarray(gram, float), np.asarray(penalty, float))[1]


def df_to_lambda(gram, penalty, df: float, tol: float = 1e-6, max_iter: int = 200) -> float:
    """Smoothing parameter whose hat matrix has trace ``df``.

    Bisection on log(lambda) over [-30, 30], widened when the target is not
    bracketed.
    """
    gram = np.asarray(gram, dtype=float)
    penalty = np.asarray(penalty, dtype=float)
    rank = _rank(gram)
    if abs(df - rank) <= tol:
        return 0.0
    if df > rank:
        raise InfeasibleDfError(f"df={df} exceeds design rank {rank}")
    trace, null_dim = _trace_curve(gram, penalty)
    if df <= null_dim + tol:
        raise InfeasibleDfError(
            f"df={df} is not above the penalty null-space dimension {null_dim}")
    lo, hi = -30.0, 30.0
    while trace(np.exp(hi)) > df:
        hi += 30.0
        if hi > 600:
            raise InfeasibleDfError(f"cannot reach df={df} with any lambda")
    while trace(np.exp(lo)) < df:
        lo -= 30.0
        if lo < -600:
            return 0.0
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val = trace(np.exp(mid))
        if abs(val - df) < 1e-3 * tol:
            break
        if val > df:
            lo = mid
        else:
            hi = mid
    return float(np.exp(mid))


def penalized_solver(gram, penalty) -> np.ndarray:
    """Inverse of (G + P) from a Cholesky factorization, cached by callers."""
    A = np.asarray(gram, dtype=float) + np.asarray(penalty, dtype=float)
    A = (A + A.T) / 2
    try:
        c = sla.cho_factor(A, lower=True, check_finite=True)
        return sla.cho_solve(c, np.eye(A.shape[0]))
    except np.linalg.LinAlgError:
        pass
    # semidefinite but nonsingular systems can still fail Cholesky by rounding
    w, V = np.linalg.eigh(A)
    if w.min() <= 1e-12 * max(w.max(), 1e-300):
        raise SingularSystemError("penalized normal equations are singular")
    return (V / w) @ V.T


def trapezoid_weights(points) -> np.ndarray:
    """Trapezoid-rule quadrature weights on an arbitrary increasing grid."""
    s = np.asarray(points, dtype=float)
    h = np.diff(s)
    w = np.zeros_like(s)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def historical_weights(s_points, t_points, tol: float = 1e-10) -> np.ndarray:
    """Quadrature weights for integrals over [s_1, t] at every t.

    Row g holds trapezoid weights over the covariate points s <= t_g; the
    last included point gets the half boundary weight. Points beyond t_g get 0.
    """
    s = np.asarray(s_points, dtype=float)
    t = np.asarray(t_points, dtype=float)
    W = np.zeros((t.size, s.size))
    scale = tol * max(s[-1] - s[0], 1.0)
    for g, tg in enumerate(t):
        k = int(np.searchsorted(s, tg + scale, side="right"))
        if k >= 2:
            W[g, :k] = trapezoid_weights(s[:k])
    return W
