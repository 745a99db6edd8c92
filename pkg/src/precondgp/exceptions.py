"""Exception hierarchy shared by the numerical modules and the CLI."""


class InputError(ValueError):
    """Invalid user input: shapes, ranges, non-finite values, malformed files."""


class NumericalError(ArithmeticError):
    """A factorization or eigensolver failed, or a matrix lost definiteness."""


class SolverBreakdown(NumericalError):
    """Conjugate gradients broke down (non-positive or non-finite step length)."""

    def __init__(self, iteration, column=None, detail=""):
        self.iteration = iteration
        self.column = column
        where = f"iteration {iteration}"
        if column is not None:
            where += f", column {column}"
        msg = f"CG breakdown at {where}; operator or preconditioner not positive definite"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class EstimationError(NumericalError):
    """A stochastic estimator produced a non-finite per-probe value."""
