"""Exception hierarchy shared across the package."""


class OtCloakError(Exception):
    """Base class for all package errors."""


class NodeNotFound(OtCloakError, KeyError):
    def __str__(self):
        return f"unknown node {self.args[0]!r}" if self.args else "unknown node"


class NotNeighbor(OtCloakError):
    pass


class EmptyNeighborhood(OtCloakError):
    pass


class EmptyPool(OtCloakError):
    pass


class EmptyTrainingSet(OtCloakError):
    pass


class ConstraintViolation(OtCloakError):
    pass


class InvalidCost(OtCloakError, ValueError):
    pass


class NumericalFailure(OtCloakError, ArithmeticError):
    pass


class ShapeError(OtCloakError, ValueError):
    pass


class FormatError(OtCloakError):
    pass


class DegenerateSplit(OtCloakError):
    pass


class InvalidParams(OtCloakError, ValueError):
    pass


class ParseError(OtCloakError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class DanglingEdge(ParseError):
    pass
