"""Exception types raised by the pipeline."""


class PipegraphError(Exception):
    """Base class for all pipeline errors."""


class MissingFile(PipegraphError):
    """A file referenced by a scene bundle does not exist."""


class SchemaViolation(PipegraphError):
    """A scene manifest field is missing or malformed; message names the field."""


class DepthDimensionMismatch(PipegraphError):
    """Depth file dimensions disagree with the declared image dimensions."""


class InvalidQuaternion(PipegraphError):
    """Pose quaternion is not unit-norm within tolerance."""


class DomainError(PipegraphError):
    """A numeric argument is outside its valid domain."""


class InvalidDepth(PipegraphError):
    """Depth value is non-positive or non-finite."""


class DegenerateCloud(PipegraphError):
    """Point cloud has too few points for the requested operation."""


class TooFewPoints(PipegraphError):
    """Cloud size is insufficient for the requested neighbor count."""


class EmptyCloud(PipegraphError):
    """An operation requiring a non-empty cloud received an empty one."""


class EmptyObservation(PipegraphError):
    """A detection produced no usable 3D points."""
