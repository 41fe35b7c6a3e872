"""Exception hierarchy shared across webaudit."""


class WebauditError(Exception):
    """Base class for every error raised by the library."""


class ExprError(WebauditError):
    pass


class DomainError(ExprError, ArithmeticError):
    """Evaluation left the real domain (ln of x <= 0, sqrt of x < 0, x/0, overflow)."""


class UnboundVariableError(ExprError, KeyError):
    def __init__(self, name):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"unbound variable {self.name!r}"


class FieldError(WebauditError):
    pass


class OutOfDomainError(FieldError):
    """A query point lies outside the validity region of a field."""


class DerivativeError(FieldError):
    pass


class GridFormatError(FieldError):
    pass


class RootError(WebauditError):
    """A scalar root solve failed."""


class NotBracketedError(RootError):
    pass


class MonotonicityError(RootError):
    pass


class RegularityError(WebauditError):
    """A web violates its general-position requirement."""


class TransversalityError(RegularityError):
    pass


class DegenerateModelError(RegularityError):
    pass


class DomainExitError(WebauditError):
    """A traced curve left the domain; the partial polyline is kept."""

    def __init__(self, message, polyline):
        super().__init__(message)
        self.polyline = polyline


class PreconditionError(WebauditError):
    """An operation was called on input that fails its stated precondition."""


class ScenarioError(WebauditError):
    pass
