"""Exception hierarchy for flexdispatch."""


class FlexDispatchError(Exception):
    """Base class for all package errors."""


class CaseParseError(FlexDispatchError):
    """Malformed case file; carries the offending line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ModelError(FlexDispatchError):
    """Grid model violates a structural requirement (e.g. no slack bus)."""


class RadialityError(ModelError):
    """Branch set is not a tree rooted at the slack bus."""


class ConfigError(FlexDispatchError):
    """Scenario configuration is malformed or inconsistent with the grid."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SupportViolationError(FlexDispatchError):
    """A transition matrix puts mass on a transition forbidden by the target."""


class KernelError(FlexDispatchError):
    """A numerical kernel failed to converge (ill-scaled inputs)."""


class InfeasibleError(FlexDispatchError):
    """Network constraints cannot be met; names the binding bus."""

    def __init__(self, message, bus=None, t=None):
        super().__init__(message)
        self.bus = bus
        self.t = t


class DivergenceError(FlexDispatchError):
    """Dual iteration residuals grew over the configured window."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history
