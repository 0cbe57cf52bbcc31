"""Exception types shared across the package."""


class MitoRBRError(Exception):
    """Base class for all package errors."""


class SchemaError(MitoRBRError, ValueError):
    """Input file does not match the expected schema."""


class GeometryError(MitoRBRError, ValueError):
    """Polygon is degenerate, self-intersecting or out of bounds."""


class InsufficientTissue(MitoRBRError):
    """Too few tissue pixels to fit a stain profile (blank or white tile)."""


class DegenerateStains(InsufficientTissue):
    """The two fitted stain directions nearly coincide (single-stain tile)."""


class DegenerateShape(MitoRBRError):
    """Shape too small for moment-based descriptors."""


class RefinementUnavailable(MitoRBRError):
    """Neither detections nor an image are available for refinement."""


class EmptyEnsemble(MitoRBRError, ValueError):
    pass


class UndefinedMetric(MitoRBRError, ValueError):
    """Metric needs both classes present."""


class LengthMismatch(MitoRBRError, ValueError):
    pass


class EmptyInput(MitoRBRError, ValueError):
    pass


class EmptyClass(MitoRBRError, ValueError):
    pass


class DuplicateImageId(SchemaError):
    pass


class TooFewPatients(MitoRBRError, ValueError):
    pass


class MissingScores(MitoRBRError):
    """An image has no model scores."""


class IdMismatch(MitoRBRError):
    """Predictions and ground truth cover different image ids."""
