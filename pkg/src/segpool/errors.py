"""Exception types raised across the pipeline."""


class SegpoolError(Exception):
    """Base class for all library errors."""


class FormatError(SegpoolError, ValueError):
    """A file or table does not follow its documented layout."""


class ParameterError(SegpoolError, ValueError):
    """An argument or configuration value is out of its valid range."""


class OrderingError(SegpoolError, ValueError):
    """Database entries were inserted out of time order."""


class EmptyFrameError(SegpoolError, ValueError):
    """A frame produced no segments, so no descriptor can be formed."""


class DegenerateDescriptorError(SegpoolError, ValueError):
    """The pooled matrix is all zeros and cannot be normalized."""


class NumericalError(SegpoolError, ArithmeticError):
    """A linear-algebra routine failed to converge."""


class NoRevisitError(SegpoolError, ValueError):
    """The evaluated sequence has no revisits, so recall is undefined."""
