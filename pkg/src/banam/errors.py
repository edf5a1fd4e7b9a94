"""Exception and warning types shared across the package."""


class BanamError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(BanamError):
    """Matrix is not positive definite, even after the jitter schedule."""


class ShapeMismatch(BanamError, ValueError):
    """Array dimensions are incompatible with the requested operation."""


class InvalidTarget(BanamError, ValueError):
    """Targets do not match the likelihood (e.g. non-binary labels)."""


class ConfigInvalid(BanamError, ValueError):
    """A training configuration field is out of range."""


class Diverged(BanamError, RuntimeError):
    """Training produced a non-finite loss or non-finite parameters."""


class StalePosterior(BanamError, RuntimeError):
    """Posterior was fitted for a different parameter/hyperparameter state."""


class IndexOutOfRange(BanamError, IndexError):
    """Network or feature index outside the model's range."""


class DegenerateParameters(BanamError, RuntimeError):
    """Closed-form precision update undefined because ``||theta||`` is ~0."""


class KTooLarge(BanamError, ValueError):
    """Requested more items (folds, pairs) than are available."""


class DuplicatePair(BanamError, ValueError):
    """A joint network for this feature pair already exists."""


class SingleClass(BanamError, ValueError):
    """Ranking metrics need both classes present."""


class MissingColumn(BanamError, ValueError):
    """Named column not found in the CSV header."""


class NonBinaryTarget(BanamError, ValueError):
    """Classification target contains values other than 0 and 1."""


class ParseError(BanamError, ValueError):
    """A CSV cell could not be parsed as a finite number.

    Attributes
    ----------
    row : int
        1-based data row (header excluded).
    col : int
        1-based column index.
    """

    def __init__(self, message, row, col):
        super().__init__(f"{message} (row {row}, column {col})")
        self.row = row
        self.col = col


class ConstantColumnWarning(UserWarning):
    """A constant feature column was dropped during standardization."""


class DegenerateFeatureWarning(UserWarning):
    """A last-layer design column is numerically zero (switched-off net)."""
