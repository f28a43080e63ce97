"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Inconsistent dimensions, misaligned grids, or invalid options."""


class DomainError(ValueError):
    """Evaluation outside a signal's domain or a sampling set's range."""


class DivergenceError(RuntimeError):
    """Numerical integration produced a non-finite state."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class HorizonError(ValueError):
    """Horizon too short for the certificate and sampling-gap bound."""


class InfeasibleError(RuntimeError):
    """Matrix-inequality feasibility problem has no strictly feasible point."""

    def __init__(self, message, worst_point=None, worst_eig=None):
        super().__init__(message)
        self.worst_point = worst_point
        self.worst_eig = worst_eig


class AuditError(ValueError):
    """Error-bound audit cannot run on the supplied estimation record."""
