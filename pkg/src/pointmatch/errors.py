"""Exception types shared across the package."""


class PointMatchError(Exception):
    """Base class for all errors raised by this package."""


class UnsupportedFormat(PointMatchError):
    """File is not one of the supported volume formats/feature subsets."""


class CorruptHeader(PointMatchError):
    """Header is unreadable or carries invalid geometry (dims/spacing)."""


class PayloadSizeMismatch(PointMatchError):
    """Raw payload length disagrees with the header's voxel count."""


class InvalidConfig(PointMatchError):
    """Search/engine configuration violates a documented constraint."""


class EmptySearchSpace(PointMatchError):
    """The requested search region contains no grid candidates."""


class QueryOutOfBounds(PointMatchError):
    """Query point does not map to an in-bounds voxel of the source."""


class EmptyInput(PointMatchError):
    """An operation requiring at least one record received none."""
