"""Exception and warning types shared across the toolkit."""


class GlyphspotError(Exception):
    """Base class for all toolkit errors."""


class FormatError(GlyphspotError):
    """Unsupported or malformed image file encoding."""


class PlacementError(GlyphspotError):
    """Synthetic glyphs cannot be placed with the required whitespace gaps."""


class BoxOutOfBounds(GlyphspotError):
    """A box does not lie inside its source image."""


class DimensionError(GlyphspotError):
    """Input does not have the required fixed dimensions."""


class DimensionMismatch(GlyphspotError):
    """Two vectors or arrays that must agree in dimension do not."""


class InsufficientData(GlyphspotError):
    """Not enough samples to fit a model."""


class EmptyModel(GlyphspotError):
    """Prediction requested from a model with no training points."""


class SingleClassData(GlyphspotError):
    """Training data contains only one class."""


class ShapeMismatch(GlyphspotError):
    """Tensor shape incompatible with the layer it was fed to."""


class BatchTooSmall(GlyphspotError):
    """Batch statistics requested on a batch of fewer than two items."""


class NonfiniteLoss(GlyphspotError):
    """Training loss became NaN or infinite; aborted with diagnostics."""


class UnlabeledData(GlyphspotError):
    """Evaluation requested on a manifest with unlabeled entries."""


class ModelFeatureMismatch(GlyphspotError):
    """Model's feature kind does not match what the pipeline can supply."""


class VersionError(GlyphspotError):
    """Model file declares an unknown format version."""


class ChecksumError(GlyphspotError):
    """Model file payload does not match its recorded checksum."""


class DegenerateImageWarning(UserWarning):
    """All pixels equal: binarization returned an all-background image."""


class DuplicateLabelWarning(UserWarning):
    """The same kernel was labeled twice with conflicting values."""
