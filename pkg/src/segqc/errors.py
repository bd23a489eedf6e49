"""Exception types shared across the package."""


class SegQCError(Exception):
    """Base class for all errors raised by this package."""


class NrrdParseError(SegQCError):
    """Mask file violates the supported NRRD subset.

    ``field`` names the offending header field when known.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class TruncationError(NrrdParseError):
    """Voxel payload shorter or longer than the header promises."""


class MetadataError(SegQCError):
    """Segment metadata inconsistent with the voxel data or the sidecar schema."""


class BoundsError(SegQCError, IndexError):
    """Voxel index outside the grid."""


class DomainError(SegQCError, ValueError):
    """Numeric input outside an operation's domain."""


class DegenerateDesignError(SegQCError):
    """Model design matrix is singular (e.g. constant condition vector)."""


class SchemaError(SegQCError):
    """CSV content does not match the required schema."""


class PhantomSpecError(SegQCError):
    """Phantom specification invalid or unrealizable."""


class PlacementError(SegQCError):
    """A defect cannot be placed within the volume bounds."""
