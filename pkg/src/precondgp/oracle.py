"""Dense reference computations.

Every routine is computed two ways (factorization and eigendecomposition)
and raises :class:`OracleDisagreement` when the routes differ, so a broken
oracle never silently validates the code under test.
"""

import numpy as np
from scipy import linalg

from .exceptions import InputError, NumericalError

DENSE_LIMIT = 4096
ROUTE_RTOL = 1e-9


class OracleDisagreement(NumericalError):
    pass


def _as_spd(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InputError(f"expected a square matrix, got shape {A.shape}")
    n = A.shape[0]
    if n > DENSE_LIMIT:
        raise InputError(f"dense oracle limited to n <= {DENSE_LIMIT}, got {n}")
    scale = max(np.abs(A).max(), 1.0)
    if np.abs(A - A.T).max() > 1e-12 * scale:
        raise InputError("matrix is not symmetric")
    return 0.5 * (A + A.T)


def _eigh(A):
    try:
        lam, V = linalg.eigh(A)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    if lam[0] <= 0:
        raise NumericalError(f"matrix not positive definite (smallest eigenvalue {lam[0]:.3e})")
    return lam, V


def _cholesky(A):
    try:
        return linalg.cho_factor(A, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"Cholesky factorization failed ({exc}); consider a larger noise") from exc


def _agree(a, b, what, rtol=ROUTE_RTOL):
    if not np.isclose(a, b, rtol=rtol, atol=rtol * max(1.0, abs(a), abs(b))):
        raise OracleDisagreement(f"{what}: factorization route {a!r} vs eigen route {b!r}")


def dense_logdet(A):
    """``log det A`` via Cholesky, cross-checked against the eigenvalue sum."""
    A = _as_spd(A)
    c, _ = _cholesky(A)
    chol = 2.0 * np.sum(np.log(np.diag(c)))
    lam, _ = _eigh(A)
    _agree(chol, float(np.sum(np.log(lam))), "logdet")
    return float(chol)


def dense_matrix_log(A):
    """Principal matrix logarithm ``V diag(log lam) V^T`` of an SPD matrix."""
    A = _as_spd(A)
    lam, V = _eigh(A)
    out = (V * np.log(lam)) @ V.T
    _agree(float(np.trace(out)), dense_logdet(A), "trace of matrix log")
    return 0.5 * (out + out.T)


def dense_matrix_function(A, f):
    """``V diag(f(lam)) V^T`` for an elementwise function ``f``."""
    A = _as_spd(A)
    lam, V = _eigh(A)
    out = (V * f(lam)) @ V.T
    return 0.5 * (out + out.T)


def dense_trace_inv_deriv(A, D):
    """``tr(A^{-1} D)`` via Cholesky solves, cross-checked in the eigenbasis of ``A``."""
    A = _as_spd(A)
    D = np.asarray(D, dtype=float)
    if D.shape != A.shape:
        raise InputError(f"derivative shape {D.shape} does not match {A.shape}")
    c = _cholesky(A)
    tr = float(np.trace(linalg.cho_solve(c, D)))
    lam, V = _eigh(A)
    eig_route = float(np.sum(np.einsum("ij,ij->j", V, D @ V) / lam))
    _agree(tr, eig_route, "trace of inverse times derivative")
    return tr


def dense_quadratic_log(A, z):
    """``z^T log(A) z``."""
    z = np.asarray(z, dtype=float)
    return float(z @ dense_matrix_log(A) @ z)


def condition_number(A):
    lam = linalg.eigvalsh(_as_spd(A))
    return float(lam[-1] / lam[0])


def preconditioned_condition_number(K, P):
    """``kappa(P^{-1/2} K P^{-1/2})`` from the generalized eigenproblem ``K v = lam P v``."""
    lam = linalg.eigh(_as_spd(K), _as_spd(P), eigvals_only=True)
    return float(lam[-1] / lam[0])
