"""Preconditioned stochastic estimation of Gaussian-process log-marginal likelihoods."""

__version__ = "0.1.0"

from .exceptions import EstimationError, InputError, NumericalError, SolverBreakdown
from .kernels import Hyperparameters, KernelOperator, KernelSpec
from .krylov import CgConfig, CgResult, batched_pcg, pcg_solve
from .likelihood import evaluate_mll, mll_estimate, mll_exact, mll_gradient
from .optimizer import OptConfig, optimize
from .preconditioners import build_preconditioner, pivoted_cholesky
from .trace_estimation import hutchinson, make_probes, slq_quadrature
from .estimator import PreconditionedGPRegressor

__all__ = [
    "CgConfig", "CgResult", "EstimationError", "Hyperparameters", "InputError", "KernelOperator",
    "KernelSpec", "NumericalError", "OptConfig", "PreconditionedGPRegressor", "SolverBreakdown",
    "batched_pcg", "build_preconditioner", "evaluate_mll", "hutchinson", "make_probes",
    "mll_estimate", "mll_exact", "mll_gradient", "optimize", "pcg_solve", "pivoted_cholesky",
    "slq_quadrature",
]
