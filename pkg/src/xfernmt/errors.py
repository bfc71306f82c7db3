"""Exception types shared across the package."""


class XferError(Exception):
    """Base class for all package errors."""


class ShapeError(XferError):
    """An operand has the wrong shape; the message names the operand."""


class DataError(XferError):
    """Malformed input data (corpus, n-best list, t-table, config)."""


class NumericError(XferError):
    """Non-finite values where finite ones are required (NaN/Inf loss)."""


class VocabularyError(XferError):
    """Vocabulary mismatch or out-of-range token id."""


class ContainerError(XferError):
    """Base for model-file problems."""


class VersionError(ContainerError):
    """Model file has an unknown magic or format version."""


class TruncatedError(ContainerError):
    """Model file ends before the declared payload."""


class ChecksumError(ContainerError):
    """A stored block fails its checksum."""


class MissingBlockError(ContainerError):
    """A required parameter block is absent; the message names it."""
