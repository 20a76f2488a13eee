"""Exception hierarchy shared by every pipeline stage.

All exceptions raised by this package derive from :class:`DetDSCIError` so
callers can catch a single base type.  Validation failures additionally
derive from :class:`ValueError` because they signal bad input values.
"""

from __future__ import annotations


class DetDSCIError(Exception):
    """Base class for every error raised by this package."""


class DomainError(DetDSCIError, ValueError):
    """An input value lies outside its documented domain."""


class ConfigError(DetDSCIError, ValueError):
    """A run configuration is malformed, incomplete, or contains unknown keys."""


class FetchError(DetDSCIError):
    """A tile could not be retrieved after exhausting retries."""


class DecodeError(DetDSCIError):
    """Fetched or cached bytes could not be decoded into a raster."""


class AssemblyError(DetDSCIError):
    """A tile set does not form a complete rectangle at a single zoom."""


class AnnotationError(DetDSCIError):
    """An annotation file could not be parsed or violates the label schema."""


class UnknownClassError(AnnotationError):
    """An annotation references a class label outside the active catalog."""

    def __init__(self, message: str, offenders: tuple[str, ...] = ()):
        super().__init__(message)
        self.offenders = offenders


class RoutingError(DetDSCIError):
    """The scale classifier backend failed or returned an unusable answer."""


class DetectionError(DetDSCIError):
    """A detector backend failed or returned an unusable answer."""
