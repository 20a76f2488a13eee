"""Tile acquisition, mosaic assembly, and sliding-window slicing.

The ingest stage turns a geographic region request into fixed-size crops:

1. :func:`plan_tiles` enumerates the tile rectangle covering the region.
2. :class:`TileFetcher` downloads tiles through a disk cache with rate
   limiting and retry, or replays cached bytes without touching the
   network.
3. :func:`assemble_mosaic` pastes the tiles into one raster.
4. :func:`slice_sliding_window` cuts the raster into 2000 px square crops,
   anchoring a final window at each far edge so no pixel is lost, and
   zero-padding only when the mosaic itself is smaller than a crop.

Credentials are referenced by environment variable name only and are never
written to logs or error messages.
"""

from __future__ import annotations

import io
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import requests
from PIL import Image

from .errors import AssemblyError, ConfigError, DecodeError, DomainError, FetchError
from .geo import GeoPoint, TileCoord, _check_zoom, geo_to_tile

logger = logging.getLogger(__name__)

CROP_SIZE = 2000
_TILE_SHAPE = (256, 256, 3)


def encode_png(pixels: np.ndarray) -> bytes:
    """Encode an ``(H, W, 3)`` uint8 raster as PNG bytes."""
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_image(data: bytes) -> np.ndarray:
    """Decode image bytes into an ``(H, W, 3)`` uint8 raster."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            return np.asarray(img.convert("RGB"))
    except Exception as exc:
        raise DecodeError(f"could not decode image bytes: {exc}") from exc


@dataclass(frozen=True)
class RetryPolicy:
    """Retry schedule for tile downloads: exponential backoff from a base delay."""

    max_attempts: int = 3
    backoff_base_s: float = 0.5

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise DomainError("max_attempts must be at least 1")
        if self.backoff_base_s < 0:
            raise DomainError("backoff_base_s must be non-negative")


@dataclass(frozen=True)
class TileSource:
    """Where tiles come from.

    ``url_template`` must contain ``{z}``, ``{x}`` and ``{y}`` placeholders.
    ``api_key_ref`` names an environment variable holding the credential;
    the value is substituted for ``{key}`` if present, otherwise appended
    as a ``key`` query parameter.  ``rate_limit_per_s`` caps request rate;
    ``None`` means unlimited.
    """

    url_template: str
    api_key_ref: str | None = None
    rate_limit_per_s: float | None = None
    retry: RetryPolicy = RetryPolicy()

    def __post_init__(self) -> None:
        for placeholder in ("{z}", "{x}", "{y}"):
            if placeholder not in self.url_template:
                raise ConfigError(f"url_template missing {placeholder} placeholder")
        if self.rate_limit_per_s is not None and self.rate_limit_per_s <= 0:
            raise DomainError("rate_limit_per_s must be positive when set")

    def url_for(self, tile: TileCoord) -> str:
        url = self.url_template.format(z=tile.z, x=tile.x, y=tile.y, key="{key}")
        if self.api_key_ref is None:
            return url.replace("{key}", "")
        key = os.environ.get(self.api_key_ref)
        if key is None:
            raise ConfigError(
                f"environment variable {self.api_key_ref!r} is not set"
            )
        if "{key}" in url:
            return url.replace("{key}", key)
        sep = "&" if "?" in url else "?"
        return f"{url}{sep}key={key}"


@dataclass(frozen=True)
class RegionRequest:
    """Axis-aligned geographic bounding box at a fixed zoom.

    ``north_west`` and ``south_east`` are the box corners.  Equal corners
    denote a degenerate box that still covers one tile.  Inverted corners
    (south-east actually north or west of north-west) denote an empty
    region, which plans zero tiles rather than raising.
    """

    north_west: GeoPoint
    south_east: GeoPoint
    zoom: int

    def __post_init__(self) -> None:
        _check_zoom(self.zoom)


def plan_tiles(region: RegionRequest) -> list[TileCoord]:
    """Tiles covering ``region`` in row-major order (west to east, north to south)."""
    nw = geo_to_tile(region.north_west, region.zoom)
    se = geo_to_tile(region.south_east, region.zoom)
    if se.x < nw.x or se.y < nw.y:
        return []
    return [
        TileCoord(region.zoom, x, y)
        for y in range(nw.y, se.y + 1)
        for x in range(nw.x, se.x + 1)
    ]


class RateLimiter:
    """Enforces a minimum interval between calls, shared across threads."""

    def __init__(
        self,
        per_second: float,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if per_second <= 0:
            raise DomainError("per_second must be positive")
        self._interval = 1.0 / per_second
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next_free = 0.0

    def wait(self) -> None:
        with self._lock:
            now = self._clock()
            delay = self._next_free - now
            self._next_free = max(now, self._next_free) + self._interval
        if delay > 0:
            self._sleep(delay)


def _default_http_get(url: str, timeout: float) -> bytes:
    response = requests.get(url, timeout=timeout)
    response.raise_for_status()
    return response.content


class TileFetcher:
    """Downloads tiles through a byte-level disk cache.

    Cached entries are stored as ``{cache_dir}/{z}/{x}/{y}.png`` holding the
    raw response bytes.  A cached entry is trusted: corrupt bytes raise
    :class:`DecodeError` instead of triggering a refetch.  ``http_get`` and
    ``sleep`` are injectable so retry and rate-limit behaviour can be tested
    without a network or a clock.
    """

    def __init__(
        self,
        source: TileSource,
        cache_dir: str | Path,
        http_get: Callable[[str, float], bytes] | None = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
        timeout: float = 30.0,
    ):
        self.source = source
        self.cache_dir = Path(cache_dir)
        self._http_get = http_get or _default_http_get
        self._sleep = sleep
        self._timeout = timeout
        self._limiter = (
            RateLimiter(source.rate_limit_per_s, clock=clock, sleep=sleep)
            if source.rate_limit_per_s is not None
            else None
        )

    def cache_path(self, tile: TileCoord) -> Path:
        return self.cache_dir / str(tile.z) / str(tile.x) / f"{tile.y}.png"

    def fetch(self, tile: TileCoord) -> np.ndarray:
        """Raster for ``tile``, from cache if present, else downloaded."""
        path = self.cache_path(tile)
        if path.exists():
            data = path.read_bytes()
        else:
            data = self._download(tile)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
        raster = decode_image(data)
        if raster.shape != _TILE_SHAPE:
            raise DecodeError(
                f"tile {tile.z}/{tile.x}/{tile.y} decoded to {raster.shape}, "
                f"expected {_TILE_SHAPE}"
            )
        return raster

    def fetch_many(
        self, tiles: list[TileCoord], parallelism: int = 4
    ) -> dict[TileCoord, np.ndarray]:
        """Fetch ``tiles`` with a bounded worker pool; result keyed by tile."""
        if parallelism < 1:
            raise DomainError("parallelism must be at least 1")
        if not tiles:
            return {}
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            rasters = list(pool.map(self.fetch, tiles))
        return dict(zip(tiles, rasters))

    def _download(self, tile: TileCoord) -> bytes:
        url = self.source.url_for(tile)
        policy = self.source.retry
        last_error: Exception | None = None
        for attempt in range(policy.max_attempts):
            if self._limiter is not None:
                self._limiter.wait()
            try:
                return self._http_get(url, self._timeout)
            except Exception as exc:
                last_error = exc
                logger.warning(
                    "fetch attempt %d/%d failed for tile %d/%d/%d",
                    attempt + 1,
                    policy.max_attempts,
                    tile.z,
                    tile.x,
                    tile.y,
                )
                if attempt + 1 < policy.max_attempts:
                    self._sleep(policy.backoff_base_s * (2.0**attempt))
        raise FetchError(
            f"tile {tile.z}/{tile.x}/{tile.y} failed after "
            f"{policy.max_attempts} attempts: {last_error}"
        ) from last_error


@dataclass
class Mosaic:
    """Contiguous raster assembled from a tile rectangle.

    ``origin`` is the north-west tile; ``pixels`` has shape ``(H, W, 3)``
    with both extents multiples of the tile size.
    """

    origin: TileCoord
    pixels: np.ndarray

    def __post_init__(self) -> None:
        h, w = self.pixels.shape[:2]
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise DomainError("mosaic pixels must have shape (H, W, 3)")
        if h % 256 or w % 256 or h == 0 or w == 0:
            raise DomainError("mosaic extents must be positive multiples of 256")

    @property
    def zoom(self) -> int:
        return self.origin.z

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def assemble_mosaic(tiles: Mapping[TileCoord, np.ndarray]) -> Mosaic:
    """Paste a complete tile rectangle into a single mosaic.

    Raises :class:`AssemblyError` when the mapping is empty, mixes zoom
    levels, has holes in its bounding rectangle, or contains a raster of
    the wrong shape.
    """
    if not tiles:
        raise AssemblyError("cannot assemble an empty tile set")
    zooms = {t.z for t in tiles}
    if len(zooms) > 1:
        raise AssemblyError(f"tiles span multiple zoom levels: {sorted(zooms)}")
    xs = [t.x for t in tiles]
    ys = [t.y for t in tiles]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    zoom = zooms.pop()
    missing = [
        f"{zoom}/{x}/{y}"
        for y in range(y0, y1 + 1)
        for x in range(x0, x1 + 1)
        if TileCoord(zoom, x, y) not in tiles
    ]
    if missing:
        shown = ", ".join(missing[:8])
        suffix = "" if len(missing) <= 8 else f" (+{len(missing) - 8} more)"
        raise AssemblyError(f"tile rectangle has holes: {shown}{suffix}")
    height = (y1 - y0 + 1) * 256
    width = (x1 - x0 + 1) * 256
    pixels = np.zeros((height, width, 3), dtype=np.uint8)
    for tile, raster in tiles.items():
        if raster.shape != _TILE_SHAPE:
            raise AssemblyError(
                f"tile {tile.z}/{tile.x}/{tile.y} has shape {raster.shape}, "
                f"expected {_TILE_SHAPE}"
            )
        py = (tile.y - y0) * 256
        px = (tile.x - x0) * 256
        pixels[py : py + 256, px : px + 256] = raster
    return Mosaic(origin=TileCoord(zoom, x0, y0), pixels=pixels)


@dataclass
class Crop:
    """Fixed-size window cut from a mosaic.

    ``offset`` is the window position in mosaic pixels.  ``valid_width``
    and ``valid_height`` give the unpadded extent; pixels beyond them are
    zero padding added when the mosaic is smaller than a crop.
    """

    pixels: np.ndarray
    offset: tuple[int, int]
    zoom: int
    valid_width: int = CROP_SIZE
    valid_height: int = CROP_SIZE
    mosaic_origin: TileCoord | None = None

    def __post_init__(self) -> None:
        if self.pixels.shape != (CROP_SIZE, CROP_SIZE, 3):
            raise DomainError(
                f"crop pixels must have shape ({CROP_SIZE}, {CROP_SIZE}, 3)"
            )
        _check_zoom(self.zoom)
        if not 0 < self.valid_width <= CROP_SIZE or not 0 < self.valid_height <= CROP_SIZE:
            raise DomainError("valid extent must be in (0, crop size]")

    @property
    def crop_id(self) -> str:
        return f"z{self.zoom}_x{self.offset[0]}_y{self.offset[1]}"


def plan_windows(
    width: int, height: int, stride: int, window: int = CROP_SIZE
) -> list[tuple[int, int]]:
    """Window offsets covering a ``width`` x ``height`` raster, row-major.

    Offsets advance by ``stride``; a final window is anchored at the far
    edge of each axis when the strided sequence would stop short, so every
    pixel is covered without any window extending past the raster.  An
    extent smaller than ``window`` yields the single offset 0 on that axis.
    """
    if width < 1 or height < 1:
        raise DomainError("raster extents must be positive")
    if not 1 <= stride <= window:
        raise DomainError(f"stride must be in [1, {window}]")

    def axis_offsets(extent: int) -> list[int]:
        if extent <= window:
            return [0]
        offsets = list(range(0, extent - window + 1, stride))
        if offsets[-1] != extent - window:
            offsets.append(extent - window)
        return offsets

    return [(x, y) for y in axis_offsets(height) for x in axis_offsets(width)]


def slice_sliding_window(mosaic: Mosaic, stride: int = CROP_SIZE) -> list[Crop]:
    """Cut ``mosaic`` into crops at the offsets given by :func:`plan_windows`."""
    crops = []
    for x, y in plan_windows(mosaic.width, mosaic.height, stride):
        valid_w = min(CROP_SIZE, mosaic.width - x)
        valid_h = min(CROP_SIZE, mosaic.height - y)
        pixels = np.zeros((CROP_SIZE, CROP_SIZE, 3), dtype=np.uint8)
        pixels[:valid_h, :valid_w] = mosaic.pixels[y : y + valid_h, x : x + valid_w]
        crops.append(
            Crop(
                pixels=pixels,
                offset=(x, y),
                zoom=mosaic.zoom,
                valid_width=valid_w,
                valid_height=valid_h,
                mosaic_origin=mosaic.origin,
            )
        )
    return crops


def resize_to_crop(image: np.ndarray, size: int = CROP_SIZE) -> np.ndarray:
    """Resize an ``(H, W, 3)`` raster to ``size`` x ``size`` with bicubic filtering."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise DomainError("image must have shape (H, W, 3)")
    resized = Image.fromarray(image, mode="RGB").resize(
        (size, size), resample=Image.Resampling.BICUBIC
    )
    return np.asarray(resized)
