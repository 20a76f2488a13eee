"""Shared fixtures: deterministic tile rasters, a pre-seeded tile cache, a
scripted pipeline configuration over a fixed region, and a loopback HTTP
server speaking both wire endpoints."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest

from detdsci.detect import Detection, DetectorBackendRef, DetectorKind
from detdsci.geo import GeoPoint, ScaleInterval, TileCoord, tile_to_geo
from detdsci.ingest import (
    CROP_SIZE,
    Crop,
    RegionRequest,
    TileSource,
    encode_png,
    plan_windows,
)
from detdsci.pipeline import PipelineConfig
from detdsci.router import ClassifierBackendRef, ClassifierKind

FIXTURE_ZOOM = 19
FIXTURE_ORIGIN = (260000, 200000)
FIXTURE_COLS = 16
FIXTURE_ROWS = 8
FIXTURE_STRIDE = 1000

# Mosaic-frame objects the scripted detector reports: (label, score, box).
# The 0.45 plane sits below the default score threshold on purpose.
FIXTURE_OBJECTS = [
    ("electrical substation", 0.9, (300.0, 300.0, 420.0, 400.0)),
    ("storage tank", 0.8, (1500.0, 600.0, 1560.0, 660.0)),
    ("bridge", 0.7, (2500.0, 1200.0, 2700.0, 1300.0)),
    ("plane", 0.45, (3500.0, 100.0, 3560.0, 160.0)),
    ("helicopter", 0.95, (100.0, 1900.0, 180.0, 1980.0)),
]


def tile_raster(tile: TileCoord) -> np.ndarray:
    """Deterministic solid-colour raster encoding the tile address."""
    pixels = np.empty((256, 256, 3), dtype=np.uint8)
    pixels[..., 0] = tile.x % 256
    pixels[..., 1] = tile.y % 256
    pixels[..., 2] = (tile.z * 37 + tile.x // 256 + 7 * (tile.y // 256)) % 256
    return pixels


def tile_midpoint(z: int, x: int, y: int) -> GeoPoint:
    a = tile_to_geo(TileCoord(z, x, y))
    b = tile_to_geo(TileCoord(z, x + 1, y + 1))
    return GeoPoint((a.latitude + b.latitude) / 2, (a.longitude + b.longitude) / 2)


def make_crop(
    zoom: int = FIXTURE_ZOOM,
    offset: tuple[int, int] = (0, 0),
    mosaic_origin: TileCoord | None = None,
    fill: int = 0,
) -> Crop:
    """A constant-fill crop; cheap to build and to PNG-encode."""
    pixels = np.full((CROP_SIZE, CROP_SIZE, 3), fill, dtype=np.uint8)
    if mosaic_origin is None:
        mosaic_origin = TileCoord(zoom, 0, 0)
    return Crop(pixels=pixels, offset=offset, zoom=zoom, mosaic_origin=mosaic_origin)


def build_script(
    objects=FIXTURE_OBJECTS,
    width: int = FIXTURE_COLS * 256,
    height: int = FIXTURE_ROWS * 256,
    stride: int = FIXTURE_STRIDE,
    zoom: int = FIXTURE_ZOOM,
) -> dict[str, tuple[Detection, ...]]:
    """Crop-id keyed script reporting every object fully inside each window."""
    script: dict[str, tuple[Detection, ...]] = {}
    for ox, oy in plan_windows(width, height, stride):
        dets = []
        for label, score, (x1, y1, x2, y2) in objects:
            if ox <= x1 and x2 <= ox + CROP_SIZE and oy <= y1 and y2 <= oy + CROP_SIZE:
                dets.append(
                    Detection(
                        class_label=label,
                        score=score,
                        bbox=(x1 - ox, y1 - oy, x2 - ox, y2 - oy),
                    )
                )
        if dets:
            script[f"z{zoom}_x{ox}_y{oy}"] = tuple(dets)
    return script


@pytest.fixture(scope="session")
def fixture_region() -> RegionRequest:
    x0, y0 = FIXTURE_ORIGIN
    nw = tile_midpoint(FIXTURE_ZOOM, x0, y0)
    se = tile_midpoint(FIXTURE_ZOOM, x0 + FIXTURE_COLS - 1, y0 + FIXTURE_ROWS - 1)
    return RegionRequest(north_west=nw, south_east=se, zoom=FIXTURE_ZOOM)


@pytest.fixture(scope="session")
def seeded_cache(tmp_path_factory) -> Path:
    """Disk cache holding every fixture-region tile, so no fetch goes out."""
    cache = tmp_path_factory.mktemp("tile-cache")
    x0, y0 = FIXTURE_ORIGIN
    for dy in range(FIXTURE_ROWS):
        for dx in range(FIXTURE_COLS):
            tile = TileCoord(FIXTURE_ZOOM, x0 + dx, y0 + dy)
            path = cache / str(tile.z) / str(tile.x) / f"{tile.y}.png"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(encode_png(tile_raster(tile)))
    return cache


@pytest.fixture
def scripted_config(tmp_path, seeded_cache, fixture_region) -> PipelineConfig:
    """Offline pipeline config: cached tiles, oracle router, scripted detector."""
    detector = DetectorBackendRef(kind=DetectorKind.SCRIPTED_MOCK, script=build_script())
    empty = DetectorBackendRef(kind=DetectorKind.SCRIPTED_MOCK, script={})
    return PipelineConfig(
        region=fixture_region,
        tile_source=TileSource(url_template="https://tiles.invalid/{z}/{x}/{y}.png"),
        classifier=ClassifierBackendRef(kind=ClassifierKind.METADATA_ORACLE),
        detectors={ScaleInterval.SMALL: detector, ScaleInterval.LARGE: empty},
        stride=FIXTURE_STRIDE,
        cache_dir=str(seeded_cache),
        output_dir=str(tmp_path / "out"),
    )


class StubServer(ThreadingHTTPServer):
    """Loopback backend recording every request it serves.

    ``classify_response`` and ``detect_response`` are swappable callables
    taking the request payload; raising inside one yields an HTTP 500.
    """

    daemon_threads = True

    def __init__(self, address, handler):
        super().__init__(address, handler)
        self.requests: list[tuple[str, dict]] = []
        self.classify_response = lambda payload: {
            "interval": "SMALL",
            "confidence": 0.97,
        }
        self.detect_response = lambda payload: {"detections": []}

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.server_address[1]}"


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length))
        self.server.requests.append((self.path, payload))
        if self.path == "/v1/classify-zoom":
            responder = self.server.classify_response
        elif self.path == "/v1/detect":
            responder = self.server.detect_response
        else:
            self.send_error(404)
            return
        try:
            body = responder(payload)
        except Exception:
            self.send_error(500)
            return
        data = json.dumps(body).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, format, *args):
        pass


@pytest.fixture
def stub_server():
    server = StubServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    server.server_close()
