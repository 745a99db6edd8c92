"""Hutchinson probes, stochastic Lanczos quadrature and variance-reduced traces.

The variance-reduced estimators split a trace into a deterministic part
computed from the preconditioner and a residual part estimated from probes:

    log det K_hat        = log det P_hat + tr(log(P_hat^{-1/2} K_hat P_hat^{-1/2}))
    tr(K_hat^{-1} dK)    = tr(P_hat^{-1} dP) + tr(K_hat^{-1} dK - P_hat^{-1} dP)

The better ``P_hat`` approximates ``K_hat`` the smaller the residual and its
estimator variance.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import EstimationError, InputError, NumericalError
from .krylov import CgConfig, as_operator, batched_pcg, tridiag_eigh


@dataclass(frozen=True)
class ProbeBatch:
    """``count`` normalized Rademacher vectors stored as columns of ``probes``."""

    probes: np.ndarray
    seed: int

    @property
    def count(self):
        return self.probes.shape[1]

    @property
    def n(self):
        return self.probes.shape[0]


def make_probes(n, count, seed):
    """Rademacher vectors scaled to unit norm (entries ``+-1/sqrt(n)``)."""
    if count < 1 or n < 1:
        raise InputError("need n >= 1 and count >= 1")
    rng = np.random.default_rng(seed)
    signs = 2.0 * rng.integers(0, 2, size=(n, count)) - 1.0
    probes = signs / np.sqrt(n)
    probes.setflags(write=False)
    return ProbeBatch(probes, int(seed))


@dataclass
class HutchinsonResult:
    estimate: float
    per_probe: np.ndarray
    sample_variance: float


def _summarize(per_probe):
    per_probe = np.asarray(per_probe, dtype=float)
    var = float(np.var(per_probe, ddof=1)) if per_probe.size > 1 else 0.0
    return HutchinsonResult(float(np.mean(per_probe)), per_probe, var)


def hutchinson(quadratic_form, batch):
    """``(n/ell) sum_i q(z_i)`` for a probe-to-scalar evaluator ``q``.

    ``per_probe`` holds the ``n q(z_i)`` samples; their mean is the estimate.
    """
    n = batch.n
    vals = np.empty(batch.count)
    for i in range(batch.count):
        q = float(quadratic_form(batch.probes[:, i]))
        if not np.isfinite(q):
            raise EstimationError(f"probe {i} produced a non-finite quadratic form ({q})")
        vals[i] = n * q
    return _summarize(vals)


@dataclass
class SlqTerm:
    probe_index: int
    nodes: np.ndarray
    weights: np.ndarray
    value: float
    n_clamped: int = 0


def slq_quadrature(T, f=np.log, clamp_floor=None, probe_index=0):
    """Gauss quadrature ``sum_j w_j f(lam_j)`` from a Lanczos tridiagonal.

    Parameters
    ----------
    T : tuple (diagonal, off_diagonal) or array of shape (k, k)
    f : callable
        Elementwise scalar function of the nodes.
    clamp_floor : float, optional
        Nodes below this are raised to it before applying ``f``. Defaults to
        ``1e-12`` times the largest node.
    """
    if isinstance(T, tuple):
        diag, off = (np.asarray(a, dtype=float) for a in T)
    else:
        T = np.asarray(T, dtype=float)
        diag, off = np.diag(T).copy(), np.diag(T, 1).copy()
    if diag.size == 0:
        raise InputError("empty tridiagonal matrix")
    try:
        nodes, W = tridiag_eigh(diag, off)
    except Exception as exc:
        raise NumericalError(f"tridiagonal eigensolver failed: {exc}") from exc
    weights = W[0, :] ** 2
    if clamp_floor is None:
        clamp_floor = 1e-12 * max(float(nodes.max()), 0.0)
    low = nodes < clamp_floor
    safe = np.where(low, clamp_floor, nodes)
    value = float(weights @ f(safe))
    return SlqTerm(probe_index, nodes, weights, value, int(low.sum()))


@dataclass
class TraceDiagnostics:
    deterministic: float
    per_probe: np.ndarray  # n * gamma_i
    sample_variance: float
    iterations: list = field(default_factory=list)
    n_clamped: int = 0


def slq_gammas(results, f=np.log, clamp_floor=None):
    """Quadrature values for a list of CG results collected with tridiagonals."""
    terms = []
    for i, res in enumerate(results):
        if res.iterations_used == 0:
            raise NumericalError(f"probe {i}: CG did no iterations, no quadrature nodes")
        terms.append(slq_quadrature(res.tridiag, f, clamp_floor, probe_index=i))
    gam = np.array([t.value for t in terms])
    bad = np.flatnonzero(~np.isfinite(gam))
    if bad.size:
        raise EstimationError(f"probe {bad[0]} produced a non-finite quadrature value")
    return gam, terms


def logdet_rhs(P, Z, whiten=True):
    """CG right-hand sides whose preconditioned Lanczos start vectors are the probes.

    Preconditioned CG on ``K_hat x = b`` runs Lanczos on
    ``P^{-1/2} K_hat P^{-1/2}`` started from ``P^{-1/2} b``; choosing
    ``b = P^{1/2} z`` starts it from the probe itself, which keeps the
    estimator unbiased for Rademacher probes. With ``whiten=False`` the
    probe is passed as is.
    """
    if P is None or not whiten:
        return np.array(Z, dtype=float)
    return P.sqrt_matvec(Z)


def vr_logdet(K_op, P, batch, cfg=None, whiten=True, clamp_floor=None):
    """Variance-reduced ``log det K_hat``.

    Returns
    -------
    estimate : float
    diagnostics : TraceDiagnostics
    """
    cfg = replace(cfg or CgConfig(), collect_tridiag=True)
    Z = batch.probes
    results = batched_pcg(K_op, logdet_rhs(P, Z, whiten), P, cfg)
    gam, terms = slq_gammas(results, np.log, clamp_floor)
    return _assemble(P.logdet() if P is not None else 0.0, gam, batch.n,
                     [r.iterations_used for r in results], sum(t.n_clamped for t in terms))


def _assemble(deterministic, gammas, n, iterations, n_clamped=0):
    per_probe = n * np.asarray(gammas, dtype=float)
    summary = _summarize(per_probe)
    diag = TraceDiagnostics(float(deterministic), per_probe, summary.sample_variance,
                            list(iterations), n_clamped)
    return float(deterministic) + summary.estimate, diag


def residual_trace_gammas(Z, W, P, dP):
    """``gamma_i = z_i^T (w_i - P^{-1} dP z_i)`` for solved ``w_i = K^{-1} dK z_i``."""
    Wt = P.solve(dP.matvec(Z)) if P is not None else 0.0
    return np.einsum("ij,ij->j", Z, W - Wt)


def vr_trace_inv_deriv(K_op, dK, P, dP, batch, cfg=None):
    """Variance-reduced ``tr(K_hat^{-1} dK_hat)``.

    ``dK`` is an operator (or callable) for the kernel derivative and ``dP``
    the matching preconditioner derivative with ``matvec`` and ``diagonal``.
    """
    cfg = cfg or CgConfig()
    Z = batch.probes
    apply_dK = as_operator(dK)
    results = batched_pcg(K_op, apply_dK(Z), P, cfg)
    W = np.column_stack([r.solution for r in results])
    gam = residual_trace_gammas(Z, W, P, dP)
    det = P.trace_inv_deriv(dP) if P is not None else 0.0
    return _assemble(det, gam, batch.n, [r.iterations_used for r in results])
