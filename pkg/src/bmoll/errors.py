"""Exception types raised by the numerical layers."""


class NumericalError(RuntimeError):
    """Base class for numerical failures (maps to CLI exit code 2)."""


class SingularHessianError(NumericalError):
    """Weighted lower-level Hessian is not positive definite at this point."""


class DivergenceError(NumericalError):
    """An iterate became non-finite, typically from a divergent stepsize."""


class LLSolveError(NumericalError):
    """High-accuracy lower-level solve did not reach the requested residual."""


class InnerMaxError(NumericalError):
    """The inner maximization over the stationarity manifold failed."""


class InnerMaxInfeasibleError(InnerMaxError):
    """Feasibility restoration could not reduce the constraint residual."""
