"""Exception and warning types shared across the package."""


class CardiofuseError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CardiofuseError, ValueError):
    """Shapes of operands do not line up for the requested operation."""


class DomainError(CardiofuseError, ValueError):
    """Input value outside the mathematical domain of an operation."""


class ContractError(CardiofuseError, ValueError):
    """A documented precondition was violated (non-finite data, non-scalar
    loss, non-binary targets, ...)."""


class ConfigurationError(CardiofuseError, ValueError):
    """Inconsistent or unresolvable configuration."""


class CapabilityError(CardiofuseError, ValueError):
    """The loaded model does not expose the requested head or output."""


class SingleClassLabelError(CardiofuseError, ValueError):
    """A label column contains only one class; the ranking metric is
    undefined and the label must be skipped rather than scored."""


class UndefinedMetricError(CardiofuseError, ValueError):
    """Every label was single-class, so no macro average exists."""


class FormatError(CardiofuseError, ValueError):
    """Base class for binary file-format violations.

    Carries the byte offset at which the problem was detected.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class MagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionError(FormatError):
    """File carries an unsupported format version."""


class TruncatedFileError(FormatError):
    """File ended before a complete record could be read."""


class DuplicateTensorError(FormatError):
    """The same tensor name appears twice in one archive."""


class DegenerateBatchWarning(UserWarning):
    """A batch statistic was too degenerate to normalize reliably
    (near-zero per-dimension spread); computation proceeds through the
    variance stabilizer."""
