"""Exception hierarchy.

Every failure the library signals deliberately derives from ``GeometryError``
so callers (and the CLI) can separate modelling errors from programming bugs.
"""

from __future__ import annotations


class GeometryError(Exception):
    """Base class for all library errors."""


class InvalidResolution(GeometryError, ValueError):
    pass


class GridMismatch(GeometryError, ValueError):
    pass


class NoBoundary(GeometryError, ValueError):
    pass


class NotAVolumeForm(GeometryError, ValueError):
    pass


class NotADiffeo(GeometryError, ValueError):
    pass


class NotAnImmersion(GeometryError, ValueError):
    pass


class NotAnEmbedding(GeometryError, ValueError):
    pass


class DimensionMismatch(GeometryError, ValueError):
    pass


class RadiusExceedsReach(GeometryError, ValueError):
    pass


class Unsupported(GeometryError, NotImplementedError):
    pass


class OutsideTube(GeometryError, ValueError):
    pass


class AmbiguousProjection(GeometryError, ValueError):
    pass


class SectionOutOfRange(GeometryError, ValueError):
    pass


class DegenerateNormalSpace(GeometryError, ValueError):
    pass


class NotInChartDomain(GeometryError, ValueError):
    pass


class MassMismatch(GeometryError, ValueError):
    pass


class SolverDivergence(GeometryError, RuntimeError):
    pass


class FitFailure(GeometryError, RuntimeError):
    pass


class InvalidBump(GeometryError, ValueError):
    pass


class ScenarioError(GeometryError, ValueError):
    """Malformed scenario file or unresolved name."""


class MoserWarning(UserWarning):
    """Target density nearly vanishes; the transport map has a steep derivative."""
