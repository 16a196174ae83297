class RoadpfError(Exception):
    """Base class for all errors raised by roadpf."""


class InvalidParameterError(RoadpfError, ValueError):
    pass


class InvalidInputError(RoadpfError, ValueError):
    pass


class InvalidStateError(RoadpfError):
    pass


class InsufficientDataError(RoadpfError, ValueError):
    pass


class FormatError(RoadpfError, ValueError):
    """A file did not match the expected on-disk format."""


class PipelineError(RoadpfError):
    """A component produced output incompatible with the tracking pipeline."""
