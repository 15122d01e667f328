"""Exceptions raised by polyviews."""

from __future__ import annotations


class PolyviewsError(Exception):
    """Base class of every error raised by polyviews."""


class ConfigError(PolyviewsError, ValueError):
    """Raised when a configuration value is out of range or unknown."""


class FileAccessError(PolyviewsError):
    """Raised when a file cannot be accessed due to permissions or IO errors."""


class ArtifactDeserializationError(PolyviewsError):
    """Raised when an artifact read from disk cannot be deserialized."""


class MissingUpstreamArtifactError(PolyviewsError):
    """Raised when a stage is run before the stage producing its input."""


# Ingest


class ParseError(PolyviewsError, ValueError):
    """Raised for malformed rows, negative or non-integer counts."""


class DuplicateIdError(PolyviewsError, ValueError):
    """Raised when two profiles in one corpus share an id."""


class TooShortError(PolyviewsError, ValueError):
    """Raised when a profile has fewer than three months."""


class AllZeroViewsError(PolyviewsError, ValueError):
    """Raised when a profile has no views after the first month is dropped."""


class EmptyCorpusError(PolyviewsError, ValueError):
    """Raised when an operation needs at least one profile."""


# Segmented regression


class SingularDesignError(PolyviewsError, ArithmeticError):
    """Raised when the linearized design matrix is rank deficient."""


class DegenerateBreakpointsError(PolyviewsError, ArithmeticError):
    """Raised when two breakpoints end up closer than the minimum gap."""


# Features


class NotConvergedError(PolyviewsError, ValueError):
    """Raised when features are requested from a fit that did not converge."""


class TooFewSegmentsError(PolyviewsError, ValueError):
    """Raised when a sign pattern is requested for a single segment."""


class MixedSegmentCountsError(PolyviewsError, ValueError):
    """Raised when feature vectors with different segment counts are mixed."""


class ZeroVarianceError(PolyviewsError, ValueError):
    """Raised when a correlation involves a constant variable."""


class EmptyInputError(PolyviewsError, ValueError):
    """Raised when an operation receives no data."""


# Clustering


class DimensionMismatchError(PolyviewsError, ValueError):
    """Raised when feature vectors have different dimensions."""


class InvalidKError(PolyviewsError, ValueError):
    """Raised when a dendrogram is cut into an impossible number of clusters."""


class MisalignmentError(PolyviewsError, ValueError):
    """Raised when per-profile sequences do not have the same length."""


class EmptyGroupError(PolyviewsError, ValueError):
    """Raised when an average curve is requested for an empty group."""


class DegenerateCovarianceError(PolyviewsError, ArithmeticError):
    """Raised when PCA is asked to project identical points."""


# Adherence


class BinMismatchError(PolyviewsError, ValueError):
    """Raised when histograms with different bin edges are compared."""
