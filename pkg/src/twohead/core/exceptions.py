"""Exception hierarchy shared by every module."""


class TwoHeadError(Exception):
    """Base class for all errors raised by the package."""


class ZeroNormError(TwoHeadError, ValueError):
    """A vector too short to normalize (norm at or below the precision tolerance)."""


class UnsupportedPrimitiveError(TwoHeadError):
    """An operation without a registered forward/VJP pair was requested."""


class ShapeMismatchError(TwoHeadError, ValueError):
    pass


class InvalidLabelError(TwoHeadError, ValueError):
    pass


class EmptyNegativesError(TwoHeadError, ValueError):
    pass


class NotADistributionError(TwoHeadError, ValueError):
    pass


class ZeroDivergenceError(TwoHeadError, ValueError):
    pass


class DimMismatchError(TwoHeadError, ValueError):
    pass


class EmptyGalleryError(TwoHeadError, ValueError):
    pass


class InvalidKError(TwoHeadError, ValueError):
    pass


class ConfigInconsistencyError(TwoHeadError):
    """The requested run cannot be executed with the given configuration."""


class BadMagicError(TwoHeadError, ValueError):
    pass


class TruncatedFileError(TwoHeadError, ValueError):
    pass


class CountMismatchError(TwoHeadError, ValueError):
    pass


class CheckpointFormatError(TwoHeadError, ValueError):
    pass
