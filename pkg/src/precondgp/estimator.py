"""scikit-learn style regressor wrapping hyperparameter training and prediction."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import split_indices
from .kernels import Hyperparameters, KernelOperator, KernelSpec, kernel_block
from .krylov import CgConfig, batched_pcg
from .likelihood import evaluate_mll, mll_exact_op
from .optimizer import OptConfig, optimize
from .oracle import DENSE_LIMIT
from .preconditioners import build_preconditioner
from .trace_estimation import make_probes


class PreconditionedGPRegressor(RegressorMixin, BaseEstimator):
    """Gaussian-process regressor trained with preconditioned stochastic estimates.

    ``fit`` maximizes the log-marginal likelihood with L-BFGS (or Adam) on
    stochastic value and gradient estimates, using a held-out slice of the
    training data for early stopping. ``predict`` returns the posterior mean.

    Parameters
    ----------
    kernel : str
        ``"rbf"``, ``"rq"``, ``"matern12"``, ``"matern32"`` or ``"matern52"``.
    ard : bool
        One lengthscale per feature.
    rq_alpha : float
        Rational-quadratic shape parameter.
    outputscale, lengthscale, noise : float
        Initial hyperparameters.
    preconditioner : str
        Preconditioner family, see ``preconditioners.KINDS``.
    rank : int
        Preconditioner rank; 0 disables preconditioning.
    n_probes : int
        Random probe vectors per estimate.
    method : {"lbfgs", "adam"}
    max_steps : int
    validation_fraction : float
        Share of the training data held out for early stopping; 0 disables it.
    cg_tol : float
        Relative residual tolerance of the conjugate-gradient solves.
    cg_max_iters : int
    exact : bool
        Use dense Cholesky values and gradients instead of the estimators.
    random_state : int
    """

    def __init__(self, kernel="rbf", ard=True, rq_alpha=1.0, outputscale=1.0, lengthscale=1.0, noise=0.1,
                 preconditioner="cholesky", rank=64, n_probes=16, method="lbfgs", max_steps=20,
                 validation_fraction=0.2, cg_tol=1e-6, cg_max_iters=1000, exact=False, random_state=0):
        self.kernel = kernel
        self.ard = ard
        self.rq_alpha = rq_alpha
        self.outputscale = outputscale
        self.lengthscale = lengthscale
        self.noise = noise
        self.preconditioner = preconditioner
        self.rank = rank
        self.n_probes = n_probes
        self.method = method
        self.max_steps = max_steps
        self.validation_fraction = validation_fraction
        self.cg_tol = cg_tol
        self.cg_max_iters = cg_max_iters
        self.exact = exact
        self.random_state = random_state

    def _spec(self):
        return KernelSpec.from_name(self.kernel, self.ard, self.rq_alpha)

    def _cg(self):
        return CgConfig(max_iters=self.cg_max_iters, rel_tol=self.cg_tol)

    def _mode(self, n):
        return "dense" if n <= DENSE_LIMIT else "matrix_free"

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True, dtype=float)
        spec = self._spec()
        self.n_features_in_ = X.shape[1]
        init = Hyperparameters.from_values(
            self.outputscale, np.full(spec.n_lengthscales(X.shape[1]), self.lengthscale), self.noise)
        X_val = y_val = None
        X_fit, y_fit = X, y
        if self.validation_fraction > 0 and X.shape[0] >= 5:
            v = float(self.validation_fraction)
            tr, va, _ = split_indices(X.shape[0], (1.0 - v, v, 0.0), self.random_state)
            X_fit, y_fit, X_val, y_val = X[tr], y[tr], X[va], y[va]
        params, trace, _ = optimize(
            X_fit, y_fit, spec, init, kind=self.preconditioner, rank=self.rank, n_probes=self.n_probes,
            cfg=OptConfig(method=self.method, max_steps=self.max_steps), seed=self.random_state,
            X_val=X_val, y_val=y_val, cg=self._cg(), exact=self.exact, mode=self._mode(X_fit.shape[0]))
        self.params_ = params
        self.trace_ = trace
        self.X_train_ = X
        self.y_train_ = y
        self._op = KernelOperator(spec, X, params, mode=self._mode(X.shape[0]))
        self._P = build_preconditioner(self.preconditioner if self.rank > 0 else "none", self._op, self.rank,
                                       seed=self.random_state)
        self.dual_coef_ = batched_pcg(self._op, y[:, None], self._P, self._cg())[0].solution
        return self

    def predict(self, X, return_std=False):
        """Posterior mean; with ``return_std`` also the latent standard deviation."""
        check_is_fitted(self, "dual_coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but the model was fitted with {self.n_features_in_}")
        Kx = kernel_block(self._spec(), self.params_, X, self.X_train_)
        mean = Kx @ self.dual_coef_
        if not return_std:
            return mean
        V = np.column_stack([r.solution for r in batched_pcg(self._op, Kx.T, self._P, self._cg())])
        var = self.params_.outputscale**2 - np.einsum("ij,ji->i", Kx, V)
        return mean, np.sqrt(np.maximum(var, 0.0))

    def log_marginal_likelihood(self, params=None):
        """Log-marginal likelihood of the training data (dense when small, estimated otherwise)."""
        check_is_fitted(self, "dual_coef_")
        params = self.params_ if params is None else params
        op = KernelOperator(self._spec(), self.X_train_, params, mode=self._mode(self.X_train_.shape[0]))
        if op.n <= DENSE_LIMIT:
            return mll_exact_op(self.y_train_, op, gradient=False)[0]
        P = build_preconditioner(self.preconditioner, op, self.rank, seed=self.random_state)
        batch = make_probes(op.n, self.n_probes, self.random_state)
        return evaluate_mll(self.y_train_, op, P, batch, self._cg(), gradient=False).value
