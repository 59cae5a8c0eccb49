"""Exception types shared across the package."""


class FeatProbeError(Exception):
    """Base class for every error raised by featprobe."""


# --- feature / binary file formats ----------------------------------------

class NonFiniteValueError(FeatProbeError):
    """A NaN or Inf was found where only finite values are allowed."""


class BadMagicError(FeatProbeError):
    """File does not start with the expected magic bytes."""


class VersionUnsupportedError(FeatProbeError):
    """File declares a version or dtype code this reader cannot handle."""


class DigestMismatchError(FeatProbeError):
    """Stored digest does not match the recomputed payload digest."""


class TruncatedFileError(FeatProbeError):
    """File is shorter (or longer) than its header declares."""


# --- manifests --------------------------------------------------------------

class SchemaError(FeatProbeError):
    """Manifest file violates the CSV schema."""


class HashMismatchError(FeatProbeError):
    """Manifest footer hash does not match the recomputed content hash."""


class SplitLeakError(FeatProbeError):
    """The same video appears in more than one split."""


class LabelInconsistentError(FeatProbeError):
    """Frames of one video disagree on label/manipulation/source, or a
    label contradicts its manipulation tag."""


class EmptySelectionError(FeatProbeError):
    """A row predicate matched no records."""


# --- conditioning -----------------------------------------------------------

class DimMismatchError(FeatProbeError):
    """Vector or matrix width differs from the fitted dimensionality."""


class ZeroVectorError(FeatProbeError):
    """L2 normalization was asked to scale an all-zero descriptor."""


class TooFewRowsError(FeatProbeError):
    """Fitting requires more rows than were provided."""


class EigenFailureError(FeatProbeError):
    """Eigendecomposition of the train covariance did not converge."""


class AffineFileMissingError(FeatProbeError):
    """Configured affine sidecar file does not exist."""


class CacheCorruptError(FeatProbeError):
    """Cached conditioner entry failed its digest check."""


# --- probe / protocols ------------------------------------------------------

class SingleClassSplitError(FeatProbeError):
    """A train or validation split contains only one class."""


class NonFiniteLossError(FeatProbeError):
    """Training loss diverged to NaN/Inf (learning rate too high)."""


class MissingSplitError(FeatProbeError):
    """Manifest lacks one of the train/val/test splits."""


class UnknownManipulationError(FeatProbeError):
    """Requested held-out manipulation does not occur in the manifest."""


class EmptyHeldOutError(FeatProbeError):
    """Held-out manipulation has no test rows to evaluate on."""


# --- metrics ----------------------------------------------------------------

class SingleClassError(FeatProbeError):
    """Scored set contains only one class; ranking metrics are undefined."""


class NoPositivesError(FeatProbeError):
    """Average precision needs at least one positive sample."""


# --- reporting / CLI --------------------------------------------------------

class MissingArtifactsError(FeatProbeError):
    """Report generation found no score artifacts in the output directory."""


class ConfigError(FeatProbeError):
    """Experiment configuration is missing, malformed, or inconsistent."""
