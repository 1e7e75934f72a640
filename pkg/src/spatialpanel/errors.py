"""Exception hierarchy shared across the package.

Every error raised on a violated contract derives from
:class:`SpatialPanelError` so callers (and the CLI) can catch one base
class and still report the specific condition by class name.
"""

from __future__ import annotations


class SpatialPanelError(Exception):
    """Base class for all package-specific errors."""


class DataFormatError(SpatialPanelError):
    """Malformed or inconsistent input data (CSV ingestion, config files)."""


class DuplicateCoordinatesError(SpatialPanelError):
    """Two regions share a location, so an inverse distance is undefined."""


class NonPositiveExponentError(SpatialPanelError):
    """Distance-decay exponent must be strictly positive."""


class SelfNeighborError(SpatialPanelError):
    """A contiguity pair lists a region as its own neighbour."""


class IndexOutOfRangeError(SpatialPanelError):
    """A pair references a region index outside the coordinate set."""


class DimensionMismatchError(SpatialPanelError):
    """Objects that must share a region (or period) dimension do not."""


class UnknownVariableError(SpatialPanelError):
    """A referenced variable is not a column of the panel."""


class UnknownClusterError(SpatialPanelError):
    """A referenced sector id is not in the cluster set."""


class RankDeficientError(SpatialPanelError):
    """Regressor matrix is rank deficient; names the collinear columns."""

    def __init__(self, message: str, columns: tuple[str, ...] = ()):
        super().__init__(message)
        self.columns = columns


class AllVariablesTimeInvariantError(SpatialPanelError):
    """Within transformation removed every regressor."""


class RhoOutOfBoundsError(SpatialPanelError):
    """Spatial coefficient outside the admissible interval of W."""


class RhoOnBoundaryError(SpatialPanelError):
    """Likelihood maximum sits on the edge of the admissible interval."""


class InadmissibleRhoError(SpatialPanelError):
    """A simulation asked for a true coefficient outside the interval."""


class NonPsdCovarianceError(SpatialPanelError):
    """Covariance matrix is not positive semidefinite."""


class NoCommonCoefficientsError(SpatialPanelError):
    """Two estimates share no coefficient on which to run a comparison."""
