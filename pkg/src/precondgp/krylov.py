"""Preconditioned conjugate gradients with Lanczos tridiagonal recovery.

The solver works on a block of right-hand sides at once: every column runs
its own CG recurrence, the operator is applied to all still-active columns in
one product, and converged columns are frozen. The Lanczos matrix of the
preconditioned system is assembled from the CG step lengths ``alpha`` and
conjugacy corrections ``beta``; only ``P^{-1}`` is ever applied.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .exceptions import InputError, SolverBreakdown


@dataclass(frozen=True)
class CgConfig:
    max_iters: int = 1000
    rel_tol: float = 1e-6
    collect_tridiag: bool = False

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise InputError("max_iters must be >= 1")
        if not (0.0 < float(self.rel_tol) < 1.0):
            raise InputError("rel_tol must lie in (0, 1)")


@dataclass
class CgResult:
    solution: np.ndarray
    iterations_used: int
    residual_history: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    converged: bool = False
    collect_tridiag: bool = False

    @property
    def tridiag(self):
        """``(diagonal, off_diagonal)`` of the Lanczos matrix, or None if not collected."""
        if not self.collect_tridiag:
            return None
        return cg_coefficients_to_tridiag(self.alphas, self.betas)

    def tridiag_matrix(self):
        t = self.tridiag
        if t is None:
            return None
        diag, off = t
        return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)


def cg_coefficients_to_tridiag(alphas, betas):
    """Lanczos tridiagonal from CG coefficients.

    ``T[j, j] = 1/alpha_j + beta_{j-1}/alpha_{j-1}`` (second term absent for
    ``j = 0``) and ``T[j, j+1] = sqrt(beta_j)/alpha_j``. Only the first
    ``k - 1`` betas are used for ``k`` alphas.
    """
    a = np.asarray(alphas, dtype=float)
    k = a.size
    b = np.asarray(betas, dtype=float)[: max(k - 1, 0)]
    diag = 1.0 / a
    if k > 1:
        diag[1:] += b / a[:-1]
    off = np.sqrt(b) / a[:-1] if k > 1 else np.empty(0)
    return diag, off


def tridiag_eigh(diag, off):
    """Eigenvalues and eigenvectors of a symmetric tridiagonal matrix."""
    if diag.size == 1:
        return diag.copy(), np.ones((1, 1))
    return eigh_tridiagonal(diag, off, lapack_driver="stev")


def as_operator(A):
    """Wrap an ndarray or an object with ``matvec`` into a callable."""
    if isinstance(A, np.ndarray):
        return lambda v: A @ v
    if hasattr(A, "matvec"):
        return A.matvec
    if callable(A):
        return A
    raise InputError(f"cannot use {type(A).__name__} as a linear operator")


def _as_solver(P):
    if P is None:
        return lambda v: v.copy()
    if hasattr(P, "solve"):
        return P.solve
    if callable(P):
        return P
    raise InputError(f"cannot use {type(P).__name__} as a preconditioner")


def _coldot(U, V):
    return np.einsum("ij,ij->j", U, V)


def batched_pcg(A, B, P=None, cfg=None, X0=None):
    """Run preconditioned CG independently on every column of ``B``.

    Parameters
    ----------
    A : operator
        SPD operator: ndarray, object with ``matvec``, or callable accepting
        (n, r) blocks.
    B : array of shape (n, r)
    P : preconditioner, optional
        Object with ``solve`` (or a callable) applying ``P^{-1}`` to blocks.
        ``None`` means the identity.
    cfg : CgConfig
    X0 : array of shape (n, r), optional
        Initial guesses; zero by default.

    Returns
    -------
    list of CgResult
        One per column, in column order.
    """
    cfg = cfg or CgConfig()
    apply_A = as_operator(A)
    solve_P = _as_solver(P)
    B = np.asarray(B, dtype=float)
    if B.ndim != 2:
        raise InputError("right-hand sides must be an (n, r) matrix")
    if not np.all(np.isfinite(B)):
        raise InputError("right-hand side has non-finite entries")
    n, r = B.shape
    X = np.zeros((n, r)) if X0 is None else np.array(X0, dtype=float, copy=True)
    if X.shape != B.shape:
        raise InputError(f"initial guess shape {X.shape} does not match {B.shape}")

    R = B - apply_A(X) if X0 is not None else B.copy()
    bnorm = np.linalg.norm(B, axis=0)
    tol = cfg.rel_tol * bnorm
    alphas = [[] for _ in range(r)]
    betas = [[] for _ in range(r)]
    hist = [[] for _ in range(r)]
    iters = np.zeros(r, dtype=int)
    converged = np.linalg.norm(R, axis=0) <= tol

    active = np.flatnonzero(~converged)
    Z = np.zeros_like(B)
    if active.size:
        Z[:, active] = solve_P(R[:, active])
    D = Z.copy()
    rz = _coldot(R, Z)
    bad = active[~(rz[active] > 0)]
    if bad.size:
        raise SolverBreakdown(0, int(bad[0]), "preconditioned residual norm not positive")

    for k in range(1, cfg.max_iters + 1):
        if active.size == 0:
            break
        Dk = D[:, active]
        Q = apply_A(Dk)
        pq = _coldot(Dk, Q)
        alpha = rz[active] / pq
        ok = np.isfinite(alpha) & (alpha > 0)
        if not ok.all():
            j = int(active[np.flatnonzero(~ok)[0]])
            raise SolverBreakdown(k, j, f"alpha={alpha[~ok][0]!r}")
        X[:, active] += alpha * Dk
        R[:, active] -= alpha * Q
        rnorm = np.linalg.norm(R[:, active], axis=0)
        iters[active] += 1
        for jj, j in enumerate(active):
            alphas[j].append(float(alpha[jj]))
            hist[j].append(float(rnorm[jj] / bnorm[j]))
        done = rnorm <= tol[active]
        converged[active[done]] = True
        active = active[~done]
        if active.size == 0 or k == cfg.max_iters:
            break
        Zk = solve_P(R[:, active])
        rz_new = _coldot(R[:, active], Zk)
        beta = rz_new / rz[active]
        ok = np.isfinite(beta) & (beta >= 0)
        if not ok.all():
            j = int(active[np.flatnonzero(~ok)[0]])
            raise SolverBreakdown(k, j, f"beta={beta[~ok][0]!r}")
        rz[active] = rz_new
        D[:, active] = Zk + beta * D[:, active]
        for jj, j in enumerate(active):
            betas[j].append(float(beta[jj]))

    return [
        CgResult(
            solution=X[:, j].copy(),
            iterations_used=int(iters[j]),
            residual_history=hist[j],
            alphas=alphas[j],
            betas=betas[j],
            converged=bool(converged[j]),
            collect_tridiag=cfg.collect_tridiag,
        )
        for j in range(r)
    ]


def pcg_solve(A, b, P=None, cfg=None, x0=None):
    """Preconditioned CG for a single right-hand side; see :func:`batched_pcg`."""
    b = np.asarray(b, dtype=float)
    if b.ndim != 1:
        raise InputError("b must be a vector")
    X0 = None if x0 is None else np.asarray(x0, dtype=float)[:, None]
    return batched_pcg(A, b[:, None], P, cfg, X0)[0]
