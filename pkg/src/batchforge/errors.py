"""Exception types shared across the package."""


class BatchforgeError(Exception):
    """Base class for all package errors."""


class InvalidLocationError(BatchforgeError, ValueError):
    pass


class InfeasibleShapeError(BatchforgeError, ValueError):
    """Raised when N != K * c or an instance cannot be laid out."""


class InstanceFormatError(BatchforgeError, ValueError):
    pass


class SchemaVersionError(InstanceFormatError):
    pass


class ValidationError(BatchforgeError, ValueError):
    """An assignment violates the batching constraints.

    ``violations`` holds the list of :class:`~batchforge.heuristics.Violation`.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        kinds = ", ".join(sorted({v.kind for v in self.violations}))
        super().__init__(f"infeasible assignment ({kinds})")


class ContractError(BatchforgeError, ValueError):
    """A precondition of an operation does not hold."""


class ShapeError(ContractError):
    pass


class TooManyLocationsError(ContractError):
    pass


class NumericError(BatchforgeError, ArithmeticError):
    """A forward value became NaN or infinite."""
