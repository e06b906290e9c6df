"""Exception hierarchy shared by all modules."""


class HerglotzError(Exception):
    """Base class for every error raised by this package."""


class ParseError(HerglotzError, ValueError):
    """Expression source could not be turned into an ``Expr``.

    ``position`` is the 0-based character offset into the source text.
    """

    def __init__(self, message, position=None):
        self.position = position
        if position is not None:
            message = f"{message} (column {position + 1})"
        super().__init__(message)


class ExprSyntaxError(ParseError):
    pass


class OrderExceeded(ParseError):
    pass


class IndexExceeded(ParseError):
    pass


class UnknownIdentifier(ParseError):
    pass


class DomainError(HerglotzError, ArithmeticError):
    """Evaluation left the domain of an elementary function."""


class InvalidInterval(HerglotzError, ValueError):
    pass


class DimensionMismatch(HerglotzError, ValueError):
    pass


class VariableOutOfBounds(HerglotzError, ValueError):
    pass


class NonFiniteState(HerglotzError, ArithmeticError):
    def __init__(self, message, node=None):
        self.node = node
        super().__init__(message)


class GridTooCoarse(HerglotzError, ValueError):
    pass


class SingularControl(HerglotzError, ArithmeticError):
    pass


class NoConvergence(HerglotzError, ArithmeticError):
    pass


class IdentityViolation(HerglotzError, ValueError):
    pass


class ColumnMismatch(HerglotzError, ValueError):
    pass


class MissingSection(HerglotzError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing section"
