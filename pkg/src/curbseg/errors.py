"""Exception hierarchy shared across the pipeline."""


class CurbsegError(Exception):
    """Base class for all curbseg errors."""


class MalformedFileError(CurbsegError):
    """A binary container has an impossible byte length or structure."""


class MalformedPointError(CurbsegError):
    """A point record decodes to non-finite coordinates."""


class AlignmentError(CurbsegError):
    """A label container does not line up with its point cloud."""


class ConfigurationError(CurbsegError):
    """A config value violates an invariant (zero-width range, bad loss constant, unknown key)."""


class CorruptionError(CurbsegError):
    """A point-to-voxel index references a cell that cannot exist."""


class StateError(CurbsegError):
    """An operation was called out of order (e.g. backward before forward)."""


class InsufficientGroundError(CurbsegError):
    """Too few low points to seed a ground-plane fit."""


class TrainingDivergedError(CurbsegError):
    """The training loss became non-finite."""
