"""Exception hierarchy shared by every module of the package."""


class LeoError(Exception):
    """Base class for all package errors."""


class CollinearPoints(LeoError, ValueError):
    pass


class DegenerateArea(LeoError, ValueError):
    pass


class SingularCovariance(LeoError, ValueError):
    pass


class EmptyInput(LeoError, ValueError):
    pass


class InvalidConfig(LeoError, ValueError):
    pass


class SchemaMismatch(LeoError, ValueError):
    pass


class WindowSizeMismatch(LeoError, ValueError):
    pass


class SlotGapError(LeoError, ValueError):
    pass


class MissingStats(LeoError, ValueError):
    pass


class ShapeMismatch(LeoError, ValueError):
    pass


class AllMaskedRow(LeoError, ValueError):
    pass


class IsolatedNode(LeoError, ValueError):
    pass


class NonScalarLoss(LeoError, ValueError):
    pass


class TapeConsumed(LeoError, RuntimeError):
    pass


class EmptyDataset(LeoError, ValueError):
    pass


class NonFiniteLoss(LeoError, ArithmeticError):
    """Raised when training produces a NaN/inf loss; carries the batch id."""

    def __init__(self, batch_id, value):
        super().__init__(f"non-finite loss {value!r} in batch {batch_id}")
        self.batch_id = batch_id
        self.value = value
