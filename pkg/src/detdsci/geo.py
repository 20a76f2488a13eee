"""Web Mercator tile geometry and the zoom / resolution correspondence.

Conventions used throughout the package:

* Tiles are 256 px squares in the spherical (Web) Mercator projection,
  addressed by ``(z, x, y)`` with ``(0, 0)`` at the north-west corner of
  the projected world and ``y`` growing southwards.
* Latitudes are clipped to the Mercator square, so the usable domain is
  ``[-85.05113, 85.05113]`` degrees.
* ``tile_to_geo`` returns the north-west corner of a tile; the south-east
  corner of ``(z, x, y)`` is the north-west corner of ``(z, x+1, y+1)``.

Two notions of resolution coexist.  ``ground_resolution`` is the exact
metres-per-pixel at a latitude, derived from the Earth radius.  The
``nominal_resolution`` table is the fixed per-zoom value used to define the
scale intervals; it is a rounded equatorial figure and intentionally not
latitude dependent.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import DomainError

EARTH_RADIUS_M = 6378137.0
TILE_SIZE = 256
MIN_ZOOM = 0
MAX_ZOOM = 23
MAX_LATITUDE = 85.05113

# Nominal metres-per-pixel for the zoom levels the pipeline operates on.
# Values below zoom 14 are not part of the working range.
NOMINAL_RESOLUTION_M_PER_PX: dict[int, float] = {
    14: 6.2,
    15: 3.1,
    16: 1.55,
    17: 0.78,
    18: 0.39,
    19: 0.19,
    20: 0.10,
    21: 0.05,
    22: 0.02,
    23: 0.01,
}

# Tile-unit slack absorbed when a coordinate sits on a tile boundary.  The
# forward/inverse Mercator pair is accurate to ~5e-9 tile units, so 1e-6
# leaves two orders of magnitude of margin while staying far below any
# physically meaningful distance.
_BOUNDARY_EPS = 1e-6


class ScaleInterval(enum.Enum):
    """Resolution regime a crop belongs to, keyed by its zoom level."""

    LARGE = "LARGE"
    SMALL = "SMALL"

    @property
    def zoom_range(self) -> range:
        if self is ScaleInterval.LARGE:
            return range(14, 18)
        return range(18, 24)


def _check_zoom(zoom: int, low: int = MIN_ZOOM, high: int = MAX_ZOOM) -> None:
    if not isinstance(zoom, int) or isinstance(zoom, bool):
        raise DomainError(f"zoom must be an integer, got {zoom!r}")
    if not low <= zoom <= high:
        raise DomainError(f"zoom {zoom} outside [{low}, {high}]")


@dataclass(frozen=True)
class GeoPoint:
    """A WGS84 coordinate inside the Mercator square.

    ``latitude`` must lie in ``[-85.05113, 85.05113]`` and ``longitude``
    in ``[-180, 180)``.
    """

    latitude: float
    longitude: float

    def __post_init__(self) -> None:
        if not -MAX_LATITUDE <= self.latitude <= MAX_LATITUDE:
            raise DomainError(
                f"latitude {self.latitude} outside [-{MAX_LATITUDE}, {MAX_LATITUDE}]"
            )
        if not -180.0 <= self.longitude < 180.0:
            raise DomainError(f"longitude {self.longitude} outside [-180, 180)")


@dataclass(frozen=True)
class TileCoord:
    """Slippy-map tile address ``(z, x, y)`` with ``0 <= x, y < 2**z``."""

    z: int
    x: int
    y: int

    def __post_init__(self) -> None:
        _check_zoom(self.z)
        n = 1 << self.z
        if not isinstance(self.x, int) or not 0 <= self.x < n:
            raise DomainError(f"tile x {self.x} outside [0, {n}) at zoom {self.z}")
        if not isinstance(self.y, int) or not 0 <= self.y < n:
            raise DomainError(f"tile y {self.y} outside [0, {n}) at zoom {self.z}")


def ground_resolution(latitude: float, zoom: int) -> float:
    """Exact ground resolution in metres per pixel at ``latitude``.

    Computed as ``2 * pi * R * cos(lat) / (256 * 2**zoom)`` with the WGS84
    semi-major axis.  At the equator and zoom 0 this is ~156543.03 m/px.
    """
    _check_zoom(zoom)
    if not -MAX_LATITUDE <= latitude <= MAX_LATITUDE:
        raise DomainError(f"latitude {latitude} outside Mercator domain")
    circumference = 2.0 * math.pi * EARTH_RADIUS_M
    return circumference * math.cos(math.radians(latitude)) / (TILE_SIZE * (1 << zoom))


def nominal_resolution(zoom: int) -> float:
    """Nominal metres-per-pixel for a working-range zoom level (14..23)."""
    _check_zoom(zoom, low=14, high=MAX_ZOOM)
    return NOMINAL_RESOLUTION_M_PER_PX[zoom]


def interval_for_zoom(zoom: int) -> ScaleInterval:
    """Map a working-range zoom level onto its scale interval.

    Zooms 14..17 belong to ``LARGE`` (coarse resolution, large structures),
    18..23 to ``SMALL``.  The two ranges partition 14..23 exactly.
    """
    _check_zoom(zoom, low=14, high=MAX_ZOOM)
    if zoom in ScaleInterval.LARGE.zoom_range:
        return ScaleInterval.LARGE
    return ScaleInterval.SMALL


def _tile_fraction(point: GeoPoint, zoom: int) -> tuple[float, float]:
    """Continuous tile coordinates of ``point`` at ``zoom``."""
    n = 1 << zoom
    xf = (point.longitude + 180.0) / 360.0 * n
    lat_rad = math.radians(point.latitude)
    yf = (1.0 - math.asinh(math.tan(lat_rad)) / math.pi) / 2.0 * n
    return xf, yf


def _snap_floor(value: float) -> int:
    nearest = round(value)
    if abs(value - nearest) <= _BOUNDARY_EPS:
        return int(nearest)
    return math.floor(value)


def geo_to_tile(point: GeoPoint, zoom: int) -> TileCoord:
    """Tile containing ``point`` at ``zoom``.

    Points exactly on a tile boundary belong to the tile to their
    south-east, matching the floor convention.  Values within a few
    nanotiles of a boundary are snapped onto it first so that corners
    produced by :func:`tile_to_geo` round-trip exactly.
    """
    _check_zoom(zoom)
    n = 1 << zoom
    xf, yf = _tile_fraction(point, zoom)
    x = min(max(_snap_floor(xf), 0), n - 1)
    y = min(max(_snap_floor(yf), 0), n - 1)
    return TileCoord(zoom, x, y)


def tile_to_geo(tile: TileCoord) -> GeoPoint:
    """North-west corner of ``tile`` as a geographic coordinate."""
    n = 1 << tile.z
    longitude = tile.x / n * 360.0 - 180.0
    lat_rad = math.atan(math.sinh(math.pi * (1.0 - 2.0 * tile.y / n)))
    return GeoPoint(math.degrees(lat_rad), longitude)


def geo_to_global_pixel(point: GeoPoint, zoom: int) -> tuple[float, float]:
    """Continuous pixel coordinates of ``point`` in the world raster at ``zoom``.

    The world raster at zoom ``z`` is ``256 * 2**z`` pixels on each side.
    """
    _check_zoom(zoom)
    xf, yf = _tile_fraction(point, zoom)
    return xf * TILE_SIZE, yf * TILE_SIZE


def global_pixel_to_geo(zoom: int, px: float, py: float) -> GeoPoint:
    """Inverse of :func:`geo_to_global_pixel` for in-range pixel coordinates."""
    _check_zoom(zoom)
    world = TILE_SIZE * (1 << zoom)
    if not 0.0 <= px <= world or not 0.0 <= py <= world:
        raise DomainError(f"pixel ({px}, {py}) outside world raster at zoom {zoom}")
    longitude = px / world * 360.0 - 180.0
    lat_rad = math.atan(math.sinh(math.pi * (1.0 - 2.0 * py / world)))
    latitude = math.degrees(lat_rad)
    if longitude >= 180.0:
        longitude = math.nextafter(180.0, -180.0)
    return GeoPoint(min(max(latitude, -MAX_LATITUDE), MAX_LATITUDE), longitude)
