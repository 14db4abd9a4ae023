"""Exception types shared across the package."""


class GTCError(Exception):
    """Base class for all package errors."""


class DimensionError(GTCError, ValueError):
    """Input shapes do not satisfy a primitive's shape rule."""


class NumericError(GTCError, ArithmeticError):
    """A forward value or gradient became NaN or infinite."""


class ContractError(GTCError, ValueError):
    """A precondition of an operation was violated."""


class InfeasibleLabelError(GTCError, ValueError):
    """The label cannot be emitted by any CTC path of the given length."""


class CapacityError(GTCError, ValueError):
    """An enumeration would exceed its configured size cap."""


class CorpusFormatError(GTCError, ValueError):
    """A corpus file is malformed; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointError(GTCError, ValueError):
    """A checkpoint file is corrupt, has the wrong version, or mismatches the model."""
