"""Exception types shared across the package.

Every error raised on purpose by this package derives from StegnetError, so
callers can catch one base class. The subclasses also inherit the matching
builtin (ValueError / RuntimeError / ArithmeticError) so generic handlers
keep working.
"""


class StegnetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(StegnetError, ValueError):
    """Tensor shapes, ranks, or dtypes violate an operation's contract."""


class SpecError(StegnetError, ValueError):
    """An operator spec, model/training configuration, filter definition,
    or stage name is invalid."""


class DataError(StegnetError, ValueError):
    """Runtime data is unusable: bad labels or payloads, degenerate batches,
    empty datasets, inadmissible image sizes."""


class ContractError(StegnetError, RuntimeError):
    """API misuse: backward without a saved forward context, updating a
    frozen layer, optimizer state that does not match the parameters."""


class FormatError(StegnetError, ValueError):
    """A file or byte stream does not match its declared format.

    ``offset`` carries the byte position where parsing failed when it is
    known, so tooling can point at the corrupt spot.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DivergenceError(StegnetError, ArithmeticError):
    """Training produced a non-finite loss and was aborted."""
