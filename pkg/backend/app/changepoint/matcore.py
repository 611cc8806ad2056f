# app/changepoint/matcore.py
"""
Dense symmetric linear algebra used by every change-point module:
Cholesky with a jitter ladder, log-determinants, solves, quadratic forms and
symmetric eigenvalues. Everything here is a pure function of its inputs.
"""
from dataclasses import dataclass

import numpy as np
import structlog
from scipy import linalg

from app.errors import ConvergenceFailure, DimensionMismatch, NotPositiveDefinite, ValidationFailed
from app.settings import settings

log = structlog.get_logger("gpcpd.matcore")


@dataclass(frozen=True)
class SymMatrix:
    """Symmetric n x n matrix. Construction symmetrizes and freezes the entries."""
    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=float, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValidationFailed(f"SymMatrix needs a non-empty square array, got shape {a.shape}")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def order(self) -> int:
        return self.entries.shape[0]

    def trace(self) -> float:
        return float(np.trace(self.entries))

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)


@dataclass(frozen=True)
class SpdFactorization:
    lower: np.ndarray
    jitter_applied: float = 0.0

    @property
    def order(self) -> int:
        return self.lower.shape[0]


def _as_entries(m) -> np.ndarray:
    return m.entries if isinstance(m, SymMatrix) else SymMatrix(m).entries


def cholesky(m) -> SpdFactorization:
    """
    Lower Cholesky factor of m. If m is not numerically positive definite the
    diagonal is lifted by JITTER_BASE * tr(m)/n times each ladder factor in turn.
    """
    a = _as_entries(m)
    try:
        lower = linalg.cholesky(a, lower=True, check_finite=True)
        return SpdFactorization(lower=lower, jitter_applied=0.0)
    except linalg.LinAlgError:
        pass
    except ValueError as exc:
        raise NotPositiveDefinite(f"matrix has non-finite entries: {exc}") from exc

    n = a.shape[0]
    scale = abs(np.trace(a)) / n
    if scale == 0.0:
        scale = 1.0
    eye = np.eye(n)
    for factor in settings.JITTER_FACTORS:
        jitter = settings.JITTER_BASE * scale * factor
        try:
            lower = linalg.cholesky(a + jitter * eye, lower=True)
        except linalg.LinAlgError:
            continue
        log.debug("jitter_applied", order=n, jitter=jitter)
        return SpdFactorization(lower=lower, jitter_applied=float(jitter))
    raise NotPositiveDefinite(f"matrix of order {n} not positive definite after jitter ladder")


def log_det(f: SpdFactorization) -> float:
    return float(2.0 * np.sum(np.log(np.diag(f.lower))))


def _check_rhs(f: SpdFactorization, b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.order:
        raise DimensionMismatch(f"right-hand side has length {b.shape[0]}, factor has order {f.order}")
    return b


def solve(f: SpdFactorization, b) -> np.ndarray:
    b = _check_rhs(f, b)
    return linalg.cho_solve((f.lower, True), b)


def quad_form(f: SpdFactorization, x) -> float:
    x = _check_rhs(f, x)
    z = linalg.solve_triangular(f.lower, x, lower=True)
    return float(z @ z)


def quad_forms(f: SpdFactorization, xs) -> np.ndarray:
    """Row-wise x^T m^-1 x for a (samples, n) array."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if xs.shape[1] != f.order:
        raise DimensionMismatch(f"samples have length {xs.shape[1]}, factor has order {f.order}")
    z = linalg.solve_triangular(f.lower, xs.T, lower=True)
    return np.einsum("ij,ij->j", z, z)


def inverse(f: SpdFactorization) -> np.ndarray:
    return linalg.cho_solve((f.lower, True), np.eye(f.order))


def sym_eigenvalues(m) -> np.ndarray:
    """Ascending eigenvalues (LAPACK tridiagonal reduction + implicit QL/QR)."""
    a = _as_entries(m)
    try:
        return linalg.eigh(a, eigvals_only=True, driver="ev")
    except linalg.LinAlgError as exc:
        raise ConvergenceFailure(f"symmetric eigenvalue iteration did not converge: {exc}") from exc
