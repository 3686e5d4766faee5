"""Exception hierarchy shared by the solvers and the experiment harness."""


class MFGError(Exception):
    """Base class for all package errors."""


class StructuralError(MFGError, ValueError):
    """Array shapes or grids do not match."""


class ConfigurationError(MFGError, ValueError):
    """Invalid parameters: CFL violation, missing measure feature, bad config file."""


class DivergenceError(MFGError, ArithmeticError):
    """A time-stepping scheme produced non-finite or inadmissible values."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class UnsupportedModelError(MFGError, TypeError):
    """The Hamiltonian lacks a property an operation requires (e.g. convexity in p)."""
