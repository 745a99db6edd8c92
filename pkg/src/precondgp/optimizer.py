"""L-BFGS with a strong Armijo-Wolfe line search, and Adam.

The objective is a callable ``objective(x, step) -> (f, g)`` that is
minimized. ``step`` identifies the optimization step an evaluation belongs
to, so stochastic objectives can draw one probe seed per step and every
evaluation inside a line search sees the same sample.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .exceptions import InputError, NumericalError
from .kernels import Hyperparameters, KernelOperator, as_data
from .krylov import batched_pcg
from .likelihood import backward_probes, evaluate_mll, mll_exact_op
from .preconditioners import build_preconditioner
from .predictive import gaussian_nlpd, predict_mean_var
from .trace_estimation import make_probes

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptConfig:
    method: str = "lbfgs"
    max_steps: int = 20
    lbfgs_memory: int = 10
    armijo_c1: float = 1e-4
    wolfe_c2: float = 0.9
    adam_lr: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    early_stop_patience: int = 5
    validation_fraction: float = 0.2
    max_linesearch: int = 20
    gtol: float = 1e-5

    def __post_init__(self):
        method = self.method.lower().replace("-", "")
        if method not in ("lbfgs", "adam"):
            raise InputError(f"unknown optimizer {self.method!r}")
        object.__setattr__(self, "method", method)
        if not (0 < self.armijo_c1 < self.wolfe_c2 < 1):
            raise InputError("need 0 < armijo_c1 < wolfe_c2 < 1")
        if self.max_steps < 1:
            raise InputError("max_steps must be >= 1")
        if self.lbfgs_memory < 1 or self.max_linesearch < 1 or self.early_stop_patience < 1:
            raise InputError("lbfgs_memory, max_linesearch and early_stop_patience must be >= 1")
        if not (0.0 <= self.validation_fraction < 1.0):
            raise InputError("validation_fraction must lie in [0, 1)")


@dataclass
class Evaluation:
    step: int
    x: np.ndarray
    f: float
    phase: str


@dataclass
class StepRecord:
    step: int
    x: np.ndarray
    train_objective: float
    validation_metric: float
    evaluations_cumulative: int
    wall_time: float
    alpha: float = float("nan")
    f_start: float = float("nan")
    slope_start: float = float("nan")
    slope_end: float = float("nan")
    note: str = ""


@dataclass
class OptTrace:
    steps: list = field(default_factory=list)
    evaluations: list = field(default_factory=list)
    stop_reason: str = ""
    best_step: int = 0


def count_model_evaluations(trace):
    """Total objective evaluations, line-search trials included."""
    return len(trace.evaluations)


class _Counter:
    """Wraps the objective, logging every evaluation into the trace."""

    def __init__(self, objective, trace):
        self.objective = objective
        self.trace = trace

    def __call__(self, x, step, phase):
        try:
            f, g = self.objective(x, step)
            f = float(f)
            g = np.asarray(g, dtype=float)
            if not (np.isfinite(f) and np.all(np.isfinite(g))):
                raise NumericalError("non-finite objective")
        except NumericalError as exc:
            logger.debug("evaluation failed at step %d: %s", step, exc)
            f, g = np.inf, None
        self.trace.evaluations.append(Evaluation(step, np.array(x, copy=True), f, phase))
        return f, g


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating two points with slopes, or None."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    rad = d1 * d1 - da * db
    if rad < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(rad)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def strong_wolfe_search(evaluate, x, f0, g0, d, alpha0, c1, c2, max_evals):
    """Line search satisfying the strong Wolfe conditions.

    ``evaluate(x) -> (f, g)``; a non-finite ``f`` shrinks the interval.
    Returns ``(alpha, f, g)`` or None after ``max_evals`` evaluations.
    """
    dphi0 = float(g0 @ d)
    used = 0

    def phi(a):
        nonlocal used
        used += 1
        f, g = evaluate(x + a * d)
        return f, g, (float(g @ d) if g is not None else np.nan)

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        while used < max_evals:
            a = None
            if np.isfinite(f_hi) and np.isfinite(d_hi):
                a = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            width = hi - lo
            if a is None or not (min(lo, hi) + 0.1 * abs(width) <= a <= max(lo, hi) - 0.1 * abs(width)):
                a = lo + 0.5 * width
            f, g, da = phi(a)
            if not np.isfinite(f) or f > f0 + c1 * a * dphi0 or f >= f_lo:
                hi, f_hi, d_hi = a, f, da
            else:
                if abs(da) <= -c2 * dphi0:
                    return a, f, g
                if da * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = a, f, da
        return None

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    a = alpha0
    first = True
    while used < max_evals:
        f, g, da = phi(a)
        if not np.isfinite(f) or f > f0 + c1 * a * dphi0 or (not first and f >= f_prev):
            return zoom(a_prev, f_prev, d_prev, a, f, da)
        if abs(da) <= -c2 * dphi0:
            return a, f, g
        if da >= 0:
            return zoom(a, f, da, a_prev, f_prev, d_prev)
        a_prev, f_prev, d_prev = a, f, da
        a = 2.0 * a
        first = False
    return None


def _two_loop(g, s_list, y_list):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_list), reversed(y_list)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if s_list:
        s, y = s_list[-1], y_list[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), a in zip(zip(s_list, y_list), reversed(alphas)):
        rho = 1.0 / (y @ s)
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def minimize(objective, x0, cfg=None, validate=None, stochastic=False):
    """Minimize ``objective`` from ``x0``.

    Parameters
    ----------
    objective : callable
        ``(x, step) -> (f, g)``.
    x0 : array
    cfg : OptConfig
    validate : callable, optional
        ``x -> metric`` (lower is better) evaluated after every accepted
        step; drives early stopping and the choice of the returned point.
    stochastic : bool
        If True the objective depends on ``step``; the starting point of
        every L-BFGS step is re-evaluated under the new step's sample so the
        line search compares values drawn from one sample.

    Returns
    -------
    x_best : array
    trace : OptTrace
    """
    cfg = cfg or OptConfig()
    x = np.array(x0, dtype=float)
    trace = OptTrace()
    call = _Counter(objective, trace)
    t0 = time.perf_counter()

    # stochastic L-BFGS evaluates the start under step 1's sample, so step 1 needs no re-evaluation
    resample = stochastic and cfg.method == "lbfgs"
    f, g = call(x, 1 if resample else 0, "init")
    if g is None:
        raise NumericalError("objective is not finite at the initial point")

    def record(step, x, f, **extra):
        metric = float(validate(x)) if validate is not None else float("nan")
        trace.steps.append(StepRecord(step, x.copy(), f, metric, len(trace.evaluations),
                                      time.perf_counter() - t0, **extra))
        return metric

    best_metric = record(0, x, f)
    best_x, best_step, since_best = x.copy(), 0, 0
    s_list, y_list = [], []
    m = np.zeros_like(x)
    v = np.zeros_like(x)

    for step in range(1, cfg.max_steps + 1):
        if cfg.method == "adam":
            m = cfg.adam_beta1 * m + (1 - cfg.adam_beta1) * g
            v = cfg.adam_beta2 * v + (1 - cfg.adam_beta2) * g * g
            mhat = m / (1 - cfg.adam_beta1**step)
            vhat = v / (1 - cfg.adam_beta2**step)
            x_new = x - cfg.adam_lr * mhat / (np.sqrt(vhat) + cfg.adam_eps)
            f_new, g_new = call(x_new, step, "adam")
            if g_new is None:
                trace.stop_reason = "objective failed"
                break
            x, f, g = x_new, f_new, g_new
            metric = record(step, x, f)
        else:
            if resample and step > 1:
                f, g_re = call(x, step, "base")
                if g_re is None:
                    trace.stop_reason = "objective failed"
                    break
                g = g_re
            if np.max(np.abs(g)) <= cfg.gtol:
                trace.stop_reason = "gradient tolerance"
                break
            d = _two_loop(g, s_list, y_list)
            if not g @ d < 0:
                s_list, y_list = [], []
                d = -g
            alpha0 = 1.0 if s_list else min(1.0, 1.0 / np.linalg.norm(g))
            res = strong_wolfe_search(
                lambda z: call(z, step, "trial"), x, f, g, d, alpha0,
                cfg.armijo_c1, cfg.wolfe_c2, cfg.max_linesearch,
            )
            if res is None:
                trace.stop_reason = "line search failed"
                trace.steps.append(StepRecord(step, x.copy(), f, float("nan"), len(trace.evaluations),
                                              time.perf_counter() - t0, note="rejected"))
                break
            alpha, f_new, g_new = res
            s = alpha * d
            yv = g_new - g
            if s @ yv > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
                s_list.append(s)
                y_list.append(yv)
                if len(s_list) > cfg.lbfgs_memory:
                    s_list.pop(0)
                    y_list.pop(0)
            metric = record(step, x + s, f_new, alpha=alpha, f_start=f,
                            slope_start=float(g @ d), slope_end=float(g_new @ d))
            x, f, g = x + s, f_new, g_new

        if validate is None or metric < best_metric:
            best_metric, best_x, best_step, since_best = metric, x.copy(), step, 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                trace.stop_reason = "early stopping"
                break
    else:
        trace.stop_reason = "max steps"
    trace.best_step = best_step
    return best_x, trace


def step_seed(seed, step):
    """Probe seed for one optimization step."""
    return int(np.random.SeedSequence([int(seed), int(step)]).generate_state(1)[0])


class GPObjective:
    """Negative log-marginal likelihood per data point, in log-space.

    Every call rebuilds the kernel operator and the preconditioner at the
    requested hyperparameters and draws probes from ``step_seed(seed, step)``.
    With ``exact=True`` the dense Cholesky value and gradient are returned.
    """

    def __init__(self, X, y, spec, kind="cholesky", rank=0, n_probes=16, cg=None, seed=0,
                 exact=False, mode="dense", share_probes=True, whiten=True, precond_options=None):
        self.X = as_data(X)
        self.y = np.asarray(y, dtype=float)
        self.spec = spec
        self.kind = kind
        self.rank = int(rank)
        self.n_probes = int(n_probes)
        self.cg = cg
        self.seed = int(seed)
        self.exact = exact
        self.mode = mode
        self.share_probes = share_probes
        self.whiten = whiten
        self.precond_options = precond_options or {}

    @property
    def n(self):
        return self.X.shape[0]

    def _operator(self, theta):
        try:
            params = Hyperparameters.from_vector(theta)
        except InputError as exc:
            raise NumericalError(f"hyperparameters out of range: {exc}") from exc
        return KernelOperator(self.spec, self.X, params, mode=self.mode)

    def __call__(self, theta, step=0):
        theta = np.asarray(theta, dtype=float)
        op = self._operator(theta)
        if self.exact:
            value, grad = mll_exact_op(self.y, op)
        else:
            s = step_seed(self.seed, step)
            P = build_preconditioner(self.kind, op, self.rank, seed=s, **self.precond_options)
            batch = make_probes(self.n, self.n_probes, s)
            ev = evaluate_mll(self.y, op, P, batch, self.cg,
                              backward_batch=backward_probes(batch, self.share_probes),
                              whiten=self.whiten)
            value, grad = ev.value, ev.gradient
        return -value / self.n, -grad / self.n

    def solve_state(self, theta):
        """``(op, u, solve)`` at ``theta``; ``solve`` applies ``K_hat^{-1}`` to (n, r) blocks."""
        theta = np.asarray(theta, dtype=float)
        op = self._operator(theta)
        if self.exact:
            c = linalg.cho_factor(op.dense(), lower=True)
            return op, linalg.cho_solve(c, self.y), lambda B: linalg.cho_solve(c, B)
        P = build_preconditioner(self.kind, op, self.rank, seed=self.seed, **self.precond_options)

        def solve(B):
            return np.column_stack([r.solution for r in batched_pcg(op, B, P, self.cg)])

        return op, solve(self.y[:, None])[:, 0], solve

    def validation_nlpd(self, theta, X_val, y_val):
        """Negative log predictive density on held-out points (CG solves for mean and variance)."""
        op, u, solve = self.solve_state(theta)
        mean, var = predict_mean_var(self.spec, op.params, self.X, u, X_val, solve)
        return gaussian_nlpd(y_val, mean, var)


def optimize(X_train, y_train, spec, init, kind="cholesky", rank=0, n_probes=16, cfg=None, seed=0,
             X_val=None, y_val=None, cg=None, exact=False, mode="dense", **objective_options):
    """Fit GP hyperparameters by minimizing ``-L(theta)/n`` in log-space.

    Early stopping watches the validation negative log predictive density
    when a validation block is given; the best-validation point is returned.

    Returns
    -------
    params : Hyperparameters
    trace : OptTrace
    objective : GPObjective
    """
    cfg = cfg or OptConfig()
    obj = GPObjective(X_train, y_train, spec, kind, rank, n_probes, cg, seed, exact, mode,
                      **objective_options)
    validate = None
    if X_val is not None and len(X_val) > 0:
        X_val = np.asarray(X_val, dtype=float)
        X_val = X_val[:, None] if X_val.ndim == 1 else X_val
        validate = lambda theta: obj.validation_nlpd(theta, X_val, y_val)  # noqa: E731
    x_best, trace = minimize(obj, init.to_vector(), cfg, validate=validate, stochastic=not exact)
    return Hyperparameters.from_vector(x_best), trace, obj
