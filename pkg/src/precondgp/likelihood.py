"""GP log-marginal likelihood and its gradient.

``evaluate_mll`` runs the forward and backward estimators on one block of
right-hand sides: the label solve, one whitened probe per log-det term, and
``dK/dtheta z_i`` for every hyperparameter. ``mll_exact`` is the dense
reference.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .exceptions import InputError, NumericalError
from .kernels import KernelOperator
from .krylov import CgConfig, batched_pcg
from .trace_estimation import logdet_rhs, make_probes, residual_trace_gammas, slq_gammas

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class MllEvaluation:
    """One stochastic evaluation of the log-marginal likelihood.

    ``gradient`` is with respect to the log-space hyperparameters,
    ``raw_gradient`` with respect to ``(o, l_j, sigma^2)``.
    """

    value: float
    gradient: np.ndarray = None
    raw_gradient: np.ndarray = None
    solve_iterations: int = 0
    per_probe_gammas: dict = field(default_factory=dict)
    probe_seed: int = 0
    logdet: float = float("nan")
    trace_terms: np.ndarray = None
    max_probe_iterations: int = 0
    quad_form: float = float("nan")
    solution: np.ndarray = None


def _check_y(y, n):
    y = np.asarray(y, dtype=float)
    if y.shape != (n,):
        raise InputError(f"targets must have shape ({n},), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise InputError("targets contain non-finite values")
    return y


def evaluate_mll(y, K_op, P, batch, cfg=None, gradient=True, backward_batch=None, whiten=True):
    """Estimate ``L(theta)`` and optionally its gradient.

    Parameters
    ----------
    y : array of shape (n,)
    K_op : KernelOperator
    P : preconditioner
        Built at the current hyperparameters; needs ``solve``, ``logdet``,
        ``sqrt_matvec``, ``trace_inv_deriv`` and ``derivative``.
    batch : ProbeBatch
        Probes for the log-determinant term.
    cfg : CgConfig
    gradient : bool
    backward_batch : ProbeBatch, optional
        Separate probes for the derivative traces; defaults to ``batch``.
    whiten : bool
        See :func:`trace_estimation.logdet_rhs`.
    """
    cfg = replace(cfg or CgConfig(), collect_tridiag=True)
    n = K_op.n
    y = _check_y(y, n)
    Z = batch.probes
    Zb = Z if backward_batch is None else backward_batch.probes
    ell, ell_b = Z.shape[1], Zb.shape[1]
    n_params = K_op.n_params

    blocks = [y[:, None], logdet_rhs(P, Z, whiten)]
    if gradient:
        # dK_hat/dsigma^2 = I: the noise block is the probes themselves
        blocks += [K_op.deriv_matvec(k, Zb) for k in range(n_params - 1)] + [Zb]
    results = batched_pcg(K_op, np.hstack(blocks), P, cfg)

    u = results[0].solution
    gam, terms = slq_gammas(results[1 : 1 + ell])
    logdet = P.logdet() + n * float(np.mean(gam))
    quad = float(y @ u)
    value = -0.5 * (quad + logdet + n * LOG_2PI)
    ev = MllEvaluation(
        value=value,
        solve_iterations=results[0].iterations_used,
        per_probe_gammas={"logdet": gam},
        probe_seed=batch.seed,
        logdet=logdet,
        quad_form=quad,
        solution=u,
        max_probe_iterations=max(r.iterations_used for r in results[1:]),
    )
    if not gradient:
        return ev

    raw = np.empty(n_params)
    traces = np.empty(n_params)
    names = K_op.params.names()
    for k in range(n_params):
        sl = slice(1 + ell + k * ell_b, 1 + ell + (k + 1) * ell_b)
        W = np.column_stack([r.solution for r in results[sl]])
        dP = P.derivative(k)
        g = residual_trace_gammas(Zb, W, P, dP)
        traces[k] = P.trace_inv_deriv(dP) + n * float(np.mean(g))
        ev.per_probe_gammas[names[k]] = g
        raw[k] = 0.5 * (float(u @ K_op.deriv_matvec(k, u)) - traces[k])
    ev.raw_gradient = raw
    ev.gradient = raw * K_op.params.raw_vector()
    ev.trace_terms = traces
    if not (np.isfinite(value) and np.all(np.isfinite(ev.gradient))):
        raise NumericalError("likelihood estimate is not finite")
    return ev


def mll_estimate(y, K_op, P, batch, cfg=None, **kwargs):
    """Stochastic estimate of ``L(theta)`` (value only)."""
    return evaluate_mll(y, K_op, P, batch, cfg, gradient=False, **kwargs).value


def mll_gradient(y, K_op, P, batch, cfg=None, **kwargs):
    """Stochastic estimate of the log-space gradient of ``L(theta)``."""
    return evaluate_mll(y, K_op, P, batch, cfg, gradient=True, **kwargs).gradient


def backward_probes(batch, share_probes=True):
    """Probe batch for the derivative traces under the probe-sharing policy."""
    if share_probes:
        return None
    return make_probes(batch.n, batch.count, batch.seed + 7919)


def mll_exact_op(y, K_op, gradient=True):
    """Dense ``L(theta)`` and log-space gradient by Cholesky factorization."""
    n = K_op.n
    y = _check_y(y, n)
    K = K_op.dense()
    try:
        c = linalg.cho_factor(K, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"Cholesky of the kernel matrix failed ({exc}); try a larger noise") from exc
    alpha = linalg.cho_solve(c, y)
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    value = -0.5 * (float(y @ alpha) + logdet + n * LOG_2PI)
    if not gradient:
        return value, None
    Kinv = linalg.cho_solve(c, np.eye(n))
    raw = np.empty(K_op.n_params)
    for k in range(K_op.n_params):
        D = K_op.deriv_dense(k)
        raw[k] = 0.5 * (float(alpha @ D @ alpha) - float(np.sum(Kinv * D)))
    return float(value), raw * K_op.params.raw_vector()


def mll_exact(y, X, spec, params, gradient=True):
    """Exact log-marginal likelihood and log-space gradient (dense)."""
    return mll_exact_op(y, KernelOperator(spec, X, params, mode="dense"), gradient)
