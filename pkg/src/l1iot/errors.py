"""Exception types shared across the package."""


class ConvergenceError(RuntimeError):
    """An iterative routine hit its iteration cap before reaching tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NumericalError(ArithmeticError):
    """A computation became ill-conditioned (singular system, underflow, ...)."""
