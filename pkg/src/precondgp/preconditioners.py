"""Diagonal-plus-low-rank preconditioners ``P_hat = sigma^2 I + L L^T``.

Every preconditioner exposes the three operations the likelihood estimators
need (``solve``, ``logdet``, ``trace_inv_deriv``), a symmetric square root
used to whiten probe vectors, and per-hyperparameter derivative operators.

Derivatives are taken with the construction's random or combinatorial
choices frozen: pivot sets for Cholesky, sampled frequencies for feature
maps, and the spanned subspace for the SVD/Nystroem family.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import roots_hermite

from .exceptions import InputError, NumericalError
from .kernels import KernelOperator, KernelSpec

KINDS = ("none", "cholesky", "svd", "rsvd", "nystroem", "rff", "qff", "exact")


class LowRankUpdate:
    """Operator ``c I + A B^T``; used for derivatives of preconditioners."""

    def __init__(self, n, c=0.0, A=None, B=None):
        self.n = n
        self.c = float(c)
        self.A = np.zeros((n, 0)) if A is None else A
        self.B = np.zeros((n, 0)) if B is None else B

    def matvec(self, v):
        out = self.A @ (self.B.T @ v)
        if self.c:
            out = out + self.c * v
        return out

    __call__ = matvec

    def diagonal(self):
        return self.c + np.einsum("ij,ij->i", self.A, self.B)

    def dense(self):
        return self.c * np.eye(self.n) + self.A @ self.B.T


class DenseDerivative:
    """Wraps an explicit derivative matrix in the operator interface."""

    def __init__(self, D):
        self.D = np.asarray(D, dtype=float)
        self.n = self.D.shape[0]

    def matvec(self, v):
        return self.D @ v

    __call__ = matvec

    def diagonal(self):
        return np.diag(self.D).copy()

    def dense(self):
        return self.D


class DiagPlusLowRank:
    """``P_hat = noise * I + factor @ factor.T``.

    Parameters
    ----------
    noise : float
        Diagonal shift ``sigma^2``; must be positive for solves.
    factor : array of shape (n, rank)
    kind : str
        Name of the construction, for reporting.
    pivots : array of int, optional
        Pivot order (Cholesky only).
    derivative_factory : callable, optional
        ``which -> operator`` for kernel hyperparameters (not the noise).
    n_params : int, optional
        Total number of hyperparameters; the last one is the noise.
    """

    def __init__(self, noise, factor, kind="none", pivots=None, derivative_factory=None,
                 n_params=None, residual_diag=None):
        factor = np.asarray(factor, dtype=float)
        if factor.ndim != 2:
            raise InputError("factor must be an (n, rank) matrix")
        if not np.all(np.isfinite(factor)):
            raise NumericalError("preconditioner factor has non-finite entries")
        self.noise = float(noise)
        self.factor = factor
        self.factor.setflags(write=False)
        self.kind = kind
        self.pivots = None if pivots is None else np.asarray(pivots, dtype=int)
        self.residual_diag = residual_diag
        self._derivative_factory = derivative_factory
        self.n_params = n_params
        self._chol = None
        self._sqrt = None
        if self.noise > 0:
            self._factorize()

    @property
    def n(self):
        return self.factor.shape[0]

    @property
    def rank(self):
        return self.factor.shape[1]

    def _factorize(self):
        if self._chol is not None:
            return self._chol
        if not self.noise > 0:
            raise NumericalError("preconditioner needs a positive noise term for solves")
        L = self.factor
        inner = L.T @ L
        inner[np.diag_indices_from(inner)] += self.noise
        try:
            self._chol = linalg.cho_factor(inner, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"inner Woodbury matrix is singular: {exc}") from exc
        return self._chol

    def matvec(self, v):
        return self.noise * v + self.factor @ (self.factor.T @ v)

    __call__ = matvec

    def solve(self, v):
        """``P_hat^{-1} v`` by the matrix inversion lemma."""
        c = self._factorize()
        v = np.asarray(v, dtype=float)
        if self.rank == 0:
            return v / self.noise
        L = self.factor
        return (v - L @ linalg.cho_solve(c, L.T @ v)) / self.noise

    def logdet(self):
        """``n log sigma^2 + log det(I + sigma^{-2} L^T L)`` via the determinant lemma."""
        c, _ = self._factorize()
        inner = 2.0 * np.sum(np.log(np.diag(c)))
        return (self.n - self.rank) * np.log(self.noise) + inner

    def sqrt_matvec(self, v):
        """Symmetric square root ``P_hat^{1/2} v`` from a thin SVD of the factor."""
        if self._sqrt is None:
            if self.rank == 0:
                U, s = np.zeros((self.n, 0)), np.zeros(0)
            else:
                U, s, _ = linalg.svd(self.factor, full_matrices=False)
            sigma = np.sqrt(self.noise)
            self._sqrt = (U, np.sqrt(self.noise + s * s) - sigma)
        U, shift = self._sqrt
        v = np.asarray(v, dtype=float)
        proj = U.T @ v
        return np.sqrt(self.noise) * v + U @ (shift[:, None] * proj if v.ndim == 2 else shift * proj)

    def trace_inv_deriv(self, dP):
        """``tr(P_hat^{-1} dP)`` through the matrix inversion lemma.

        ``dP`` must provide ``matvec`` and ``diagonal``. Uses ``rank``
        applications of ``dP`` and ``O(n rank^2)`` extra work.
        """
        c = self._factorize()
        first = np.sum(dP.diagonal()) / self.noise
        if self.rank == 0:
            return float(first)
        L = self.factor
        left = linalg.cho_solve(c, L.T).T  # L (sigma^2 I + L^T L)^{-1}
        right = dP.matvec(L)
        return float(first - np.sum(left * right) / self.noise)

    def derivative(self, which):
        """Operator for ``dP_hat/dtheta_which`` (raw hyperparameter)."""
        if self.n_params is not None and which == self.n_params - 1:
            return LowRankUpdate(self.n, c=1.0)
        if self._derivative_factory is None:
            raise InputError(f"{self.kind} preconditioner was built without derivative information")
        return self._derivative_factory(which)

    def dense(self):
        return self.noise * np.eye(self.n) + self.factor @ self.factor.T

    def __repr__(self):
        return f"DiagPlusLowRank(kind={self.kind!r}, n={self.n}, rank={self.rank}, noise={self.noise:.3g})"


class ExactPreconditioner:
    """``P_hat = K_hat`` itself, factorized densely.

    Only meaningful for testing: with it every stochastic residual vanishes.
    """

    kind = "exact"

    def __init__(self, op):
        self.op = op
        self.K = op.dense() if isinstance(op, KernelOperator) else np.asarray(op, dtype=float)
        self.noise = op.noise if isinstance(op, KernelOperator) else None
        try:
            self._chol = linalg.cho_factor(self.K, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"exact preconditioner factorization failed: {exc}") from exc
        lam, V = linalg.eigh(self.K)
        self._sqrt = (V * np.sqrt(np.clip(lam, 0.0, None))) @ V.T
        self.rank = self.K.shape[0]
        self.n = self.K.shape[0]

    def matvec(self, v):
        return self.K @ v

    __call__ = matvec

    def solve(self, v):
        return linalg.cho_solve(self._chol, v)

    def logdet(self):
        return float(2.0 * np.sum(np.log(np.diag(self._chol[0]))))

    def sqrt_matvec(self, v):
        return self._sqrt @ v

    def trace_inv_deriv(self, dP):
        D = dP.dense() if hasattr(dP, "dense") else dP.matvec(np.eye(self.n))
        return float(np.trace(linalg.cho_solve(self._chol, D)))

    def derivative(self, which):
        if not isinstance(self.op, KernelOperator):
            raise InputError("exact preconditioner built from a bare matrix has no derivatives")
        return DenseDerivative(self.op.deriv_dense(which))

    def dense(self):
        return self.K.copy()


def precond_solve(P, v):
    return P.solve(v)


def precond_logdet(P):
    return P.logdet()


def precond_trace_inv_deriv(P, dP):
    return P.trace_inv_deriv(dP)


def identity_precond(n, noise):
    """Rank-zero preconditioner ``sigma^2 I`` (the no-preconditioning baseline)."""
    return DiagPlusLowRank(noise, np.zeros((n, 0)), kind="none",
                           derivative_factory=lambda which: LowRankUpdate(n))


# -- accessors -----------------------------------------------------------------------


def _dense_accessor(K):
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InputError("expected a square matrix")
    return K, (lambda: np.diag(K).copy()), (lambda idx: K[:, idx])


def _accessor(K):
    if isinstance(K, np.ndarray):
        return _dense_accessor(K)
    if hasattr(K, "diagonal") and hasattr(K, "columns"):
        return K, K.diagonal, K.columns
    if hasattr(K, "diagonal") and hasattr(K, "column"):
        return K, K.diagonal, lambda idx: np.column_stack([K.column(i) for i in np.atleast_1d(idx)])
    raise InputError("K must be a matrix or expose diagonal() and column(i)/columns(idx)")


def _noise_of(K, noise):
    if noise is not None:
        return float(noise)
    return float(getattr(K, "noise", 0.0))


def _kernel_n_params(K):
    return K.n_params if isinstance(K, KernelOperator) else None


def _subspace_derivative(op, Q):
    """Frozen-subspace derivative ``Q Q^T dK Q Q^T`` for an orthonormal ``Q``."""

    def factory(which):
        G = Q.T @ op.deriv_matvec(which, Q)
        G = 0.5 * (G + G.T)
        return LowRankUpdate(op.n, A=Q @ G, B=Q)

    return factory


def _orthonormal_basis(L):
    if L.shape[1] == 0:
        return L
    U, s, _ = linalg.svd(L, full_matrices=False)
    keep = s > s[0] * 1e-12 if s.size else s > 0
    return U[:, keep]


# -- builders ------------------------------------------------------------------------


def pivoted_cholesky(K, rank, diag_tol=None, noise=None):
    """Greedy pivoted partial Cholesky factorization.

    Each step picks the largest remaining Schur-complement diagonal (lowest
    index on ties) and appends the corresponding column scaled by the pivot
    root. Stops early once the largest remaining diagonal is ``<= diag_tol``.

    Parameters
    ----------
    K : ndarray or accessor
        SPD matrix, or an object with ``diagonal()`` and ``columns(idx)``
        (e.g. :class:`KernelOperator`, whose noise is then used).
    rank : int
    diag_tol : float, optional
        Absolute stopping tolerance; default ``n * eps * max(diag K)``.
    noise : float, optional
        Diagonal shift of the resulting preconditioner.
    """
    src, get_diag, get_cols = _accessor(K)
    d = np.array(get_diag(), dtype=float)
    n = d.size
    rank = int(rank)
    if not (0 <= rank <= n):
        raise InputError(f"rank must lie in [0, {n}], got {rank}")
    kmax = float(d.max()) if n else 0.0
    if diag_tol is None:
        diag_tol = n * np.finfo(float).eps * kmax
    L = np.zeros((n, rank))
    pivots = []
    for k in range(rank):
        if d.min() < -1e-10 * kmax:
            raise NumericalError(f"negative pivot {d.min():.3e} at step {k}: matrix not PSD")
        i = int(np.argmax(d))
        if d[i] <= diag_tol:
            break
        col = np.asarray(get_cols([i]), dtype=float).reshape(n) - L[:, :k] @ L[i, :k]
        L[:, k] = col / np.sqrt(d[i])
        d -= L[:, k] ** 2
        d[i] = 0.0
        pivots.append(i)
    L = L[:, : len(pivots)]
    pivots = np.asarray(pivots, dtype=int)
    factory = _cholesky_derivative(src, L, pivots) if isinstance(src, KernelOperator) else None
    return DiagPlusLowRank(_noise_of(src, noise), L, "cholesky", pivots, factory,
                           _kernel_n_params(src), residual_diag=d)


def _cholesky_derivative(op, L, pivots):
    """Derivative of ``C W^{-1} C^T`` with ``C = K[:, S]``, ``W = K[S, S]``, pivots ``S`` frozen."""
    n = op.n
    if pivots.size == 0:
        return lambda which: LowRankUpdate(n)
    LS = L[pivots, :]
    # pivot rows of L form a lower-triangular block, and L LS^{-1} = C W^{-1}
    F = linalg.solve_triangular(LS, L.T, lower=True, trans="T").T

    def factory(which):
        dC = op.deriv_columns(which, pivots)
        dW = dC[pivots, :]
        dW = 0.5 * (dW + dW.T)
        return LowRankUpdate(n, A=np.hstack([dC, F]), B=np.hstack([F, dC - F @ dW]))

    return factory


def _dense_kernel(K):
    if isinstance(K, KernelOperator):
        return K.dense(noise=False)
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InputError("expected a square matrix")
    return 0.5 * (K + K.T)


def truncated_svd_precond(K, rank, noise=None):
    """Top-``rank`` eigenpairs of ``K``: the Frobenius-optimal rank-``rank`` approximation."""
    Kd = _dense_kernel(K)
    n = Kd.shape[0]
    if not (0 <= rank <= n):
        raise InputError(f"rank must lie in [0, {n}], got {rank}")
    lam, V = linalg.eigh(Kd)
    if lam[0] < -1e-10 * max(lam[-1], 0.0):
        raise NumericalError(f"kernel matrix has negative eigenvalue {lam[0]:.3e}")
    lam, V = lam[::-1][:rank], V[:, ::-1][:, :rank]
    L = V * np.sqrt(np.clip(lam, 0.0, None))
    factory = _subspace_derivative(K, V) if isinstance(K, KernelOperator) else None
    return DiagPlusLowRank(_noise_of(K, noise), L, "svd", None, factory, _kernel_n_params(K))


def randomized_svd_precond(K, rank, samples=None, seed=0, noise=None):
    """Sketch-then-eigendecompose approximation from ``samples`` Gaussian test vectors."""
    if isinstance(K, KernelOperator):
        apply_K, n = K.kernel_matvec, K.n
    else:
        Kd = _dense_kernel(K)
        apply_K, n = (lambda v: Kd @ v), Kd.shape[0]
    samples = min(n, 2 * rank if samples is None else int(samples))
    if samples < rank or not (0 <= rank <= n):
        raise InputError("need 0 <= rank <= samples <= n")
    if rank == 0:
        return DiagPlusLowRank(_noise_of(K, noise), np.zeros((n, 0)), "rsvd", None,
                               lambda which: LowRankUpdate(n), _kernel_n_params(K))
    rng = np.random.default_rng(seed)
    Y = apply_K(rng.standard_normal((n, samples)))
    Q, _ = linalg.qr(Y, mode="economic")
    B = Q.T @ apply_K(Q)
    lam, W = linalg.eigh(0.5 * (B + B.T))
    lam, W = lam[::-1][:rank], W[:, ::-1][:, :rank]
    V = Q @ W
    L = V * np.sqrt(np.clip(lam, 0.0, None))
    factory = _subspace_derivative(K, V) if isinstance(K, KernelOperator) else None
    return DiagPlusLowRank(_noise_of(K, noise), L, "rsvd", None, factory, _kernel_n_params(K))


def nystroem_precond(K, rank, samples=None, probabilities="uniform", seed=0, noise=None):
    """Randomized Nystroem approximation ``C W_rank^+ C^T``.

    ``samples`` columns are drawn with replacement, either uniformly or with
    probabilities proportional to ``K_ii``, and rescaled by
    ``1/sqrt(samples p_i)``. The pseudo-inverse of the rank-truncated core
    discards eigenvalues below ``1e-10`` times the largest.
    """
    _, get_diag, get_cols = _accessor(K)
    diag = np.asarray(get_diag(), dtype=float)
    n = diag.size
    samples = min(n, 2 * rank) if samples is None else int(samples)
    if samples < rank or rank < 0:
        raise InputError("need samples >= rank >= 0")
    if probabilities == "uniform":
        p = np.full(n, 1.0 / n)
    elif probabilities in ("diagonal", "diagonal-weighted"):
        w = np.clip(diag, 0.0, None)
        if not w.sum() > 0:
            raise NumericalError("all-zero diagonal; cannot weight columns")
        p = w / w.sum()
    else:
        raise InputError(f"unknown sampling probabilities {probabilities!r}")
    if rank == 0:
        return DiagPlusLowRank(_noise_of(K, noise), np.zeros((n, 0)), "nystroem", None,
                               lambda which: LowRankUpdate(n), _kernel_n_params(K))
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=samples, replace=True, p=p)
    scale = 1.0 / np.sqrt(samples * p[idx])
    C = np.asarray(get_cols(idx), dtype=float) * scale
    W = C[idx, :] * scale[:, None]
    lam, U = linalg.eigh(0.5 * (W + W.T))
    if not lam[-1] > 0:
        raise NumericalError("sampled Nystroem core is zero")
    lam, U = lam[::-1][:rank], U[:, ::-1][:, :rank]
    keep = lam > 1e-10 * lam[0]
    L = C @ (U[:, keep] / np.sqrt(lam[keep]))
    factory = _subspace_derivative(K, _orthonormal_basis(L)) if isinstance(K, KernelOperator) else None
    return DiagPlusLowRank(_noise_of(K, noise), L, "nystroem", idx, factory, _kernel_n_params(K))


def _sample_spectral(spec, rng, count, d):
    if spec.family == "rbf":
        return rng.standard_normal((count, d))
    if spec.family == "matern":
        dof = 2.0 * spec.nu
        g = rng.standard_normal((count, d))
        u = rng.chisquare(dof, size=count)
        return g / np.sqrt(u / dof)[:, None]
    raise InputError(f"random Fourier features need a known spectral density; {spec.family} unsupported")


def _feature_derivative(n, L_of, dL_of):
    def factory(which):
        dL = dL_of(which)
        return LowRankUpdate(n, A=np.hstack([dL, L_of]), B=np.hstack([L_of, dL]))

    return factory


def rff_precond(X, spec, params, features, seed=0):
    """Random Fourier features ``sqrt(2 o^2 / ell) cos(X omega / l + b)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    features = int(features)
    if features < 0:
        raise InputError("features must be non-negative")
    rng = np.random.default_rng(seed)
    omega = _sample_spectral(spec, rng, features, d)
    b = rng.uniform(0.0, 2.0 * np.pi, size=features)
    ls = params.lengthscales
    Xs = X / (ls if ls.size > 1 else ls[0])
    arg = Xs @ omega.T + b
    amp = np.sqrt(2.0 * params.outputscale**2 / max(features, 1))
    L = amp * np.cos(arg)
    n_params = params.size

    def dL_of(which):
        if which == 0:
            return L / params.outputscale
        if ls.size == 1:
            return amp * np.sin(arg) * (Xs @ omega.T) / ls[0]
        j = which - 1
        return amp * np.sin(arg) * (Xs[:, j, None] * omega[None, :, j]) / ls[j]

    return DiagPlusLowRank(params.noise, L, "rff", None,
                           _feature_derivative(n, L, dL_of), n_params)


def qff_precond(X, params, features, spec=None):
    """Quadrature Fourier features for the one-dimensional RBF kernel.

    Uses the ``features``-point Gauss-Hermite rule for the Gaussian spectral
    density. Nodes come in ``+-`` pairs, each pair giving a cosine and a sine
    feature; an odd rule adds the constant feature of the zero node. Inputs
    are centred on the midpoint of their range (the kernel is shift
    invariant). Deterministic: no random numbers are drawn.
    """
    spec = spec or KernelSpec("rbf")
    if spec.family != "rbf":
        raise InputError("quadrature Fourier features are implemented for the RBF kernel only")
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise InputError("quadrature Fourier features support d = 1 only")
        X = X[:, 0]
    features = int(features)
    n = X.size
    n_params = params.size
    o, ls = params.outputscale, float(params.lengthscales[0])
    x = X - 0.5 * (X.min() + X.max())
    if features == 0:
        return DiagPlusLowRank(params.noise, np.zeros((n, 0)), "qff", None,
                               lambda which: LowRankUpdate(n), n_params)
    t, w = roots_hermite(features)
    w = w / np.sqrt(np.pi)
    pos = t > 1e-14
    zero = np.abs(t) <= 1e-14
    tp, wp = t[pos], 2.0 * w[pos]
    omega = np.sqrt(2.0) * tp / ls
    wx = np.outer(x, omega)
    amp = o * np.sqrt(wp)
    blocks = [amp * np.cos(wx), amp * np.sin(wx)]
    if zero.any():
        blocks.insert(0, np.full((n, 1), o * np.sqrt(w[zero][0])))
    L = np.hstack(blocks)

    def dL_of(which):
        if which == 0:
            return L / o
        # d/dl of cos(omega x) = sin(omega x) omega x / l, sin -> -cos
        fac = wx / ls
        parts = [amp * np.sin(wx) * fac, -amp * np.cos(wx) * fac]
        if zero.any():
            parts.insert(0, np.zeros((n, 1)))
        return np.hstack(parts)

    return DiagPlusLowRank(params.noise, L, "qff", None,
                           _feature_derivative(n, L, dL_of), n_params)


def build_preconditioner(kind, op, rank, seed=0, **options):
    """Build a preconditioner for ``op`` by name (see ``KINDS``)."""
    if kind not in KINDS:
        raise InputError(f"unknown preconditioner {kind!r}; expected one of {KINDS}")
    if kind == "exact":
        return ExactPreconditioner(op)
    if kind == "none" or rank == 0:
        P = identity_precond(op.n, op.noise)
        P.n_params = op.n_params
        return P
    if kind == "cholesky":
        return pivoted_cholesky(op, rank, diag_tol=options.get("diag_tol"))
    if kind == "svd":
        return truncated_svd_precond(op, rank)
    if kind == "rsvd":
        return randomized_svd_precond(op, rank, options.get("samples"), seed)
    if kind == "nystroem":
        return nystroem_precond(op, rank, options.get("samples"),
                                options.get("probabilities", "uniform"), seed)
    if kind == "rff":
        return rff_precond(op.X, op.spec, op.params, rank, seed)
    return qff_precond(op.X, op.params, rank, op.spec)


@dataclass
class QualityCurve:
    ranks: list
    rel_frobenius: list


def quality_curve(K_hat, builder, ranks):
    """Relative Frobenius error ``||K_hat - P_hat||_F / ||K_hat||_F`` per rank.

    Parameters
    ----------
    K_hat : array of shape (n, n)
        Dense target matrix, noise included.
    builder : callable
        ``rank -> preconditioner`` with a ``dense()`` method.
    ranks : sequence of int
    """
    K_hat = np.asarray(K_hat, dtype=float)
    norm = np.linalg.norm(K_hat)
    errs = [float(np.linalg.norm(K_hat - builder(int(r)).dense()) / norm) for r in ranks]
    return QualityCurve([int(r) for r in ranks], errs)
