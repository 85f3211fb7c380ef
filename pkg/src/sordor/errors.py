class SordorError(Exception):
    """Base class for errors raised by this package."""


class InvalidArgumentError(SordorError, ValueError):
    pass


class OutOfBandError(SordorError, ValueError):
    """An offset lies outside the band ``[-pi * bandwidth, +pi * bandwidth]``."""


class MissingDependencyError(SordorError):
    """A morph job refers to a source grid cell that has no result yet."""


class CheckpointError(SordorError):
    pass


class SchemaError(SordorError, ValueError):
    pass


class UnsupportedVersionError(SchemaError):
    pass
