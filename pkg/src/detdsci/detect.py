"""Second stage: run a detector on a crop and lift boxes to the map frame.

Detectors are external services; this module speaks their wire protocol
(``POST {endpoint}/v1/detect`` with the crop as base64 PNG and the
detector identifier chosen by the router) and normalises their output:
scores sorted descending with deterministic tie-breaks, at most 100
detections per crop, crop-local boxes validated against the crop extent.

``lift_to_global`` moves crop-local boxes into mosaic pixels and
geographic coordinates.  ``merge_nms`` removes cross-window duplicates
after lifting, greedily and per class.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Mapping

from .errors import ConfigError, DetectionError, DomainError
from .geo import GeoPoint, TileCoord, global_pixel_to_geo
from .ingest import CROP_SIZE, Crop
from .metrics import iou
from .wire import HttpPost, crop_payload_b64, default_http_post

MAX_DETECTIONS = 100
DETECT_PATH = "/v1/detect"

Box = tuple[float, float, float, float]


@dataclass(frozen=True)
class Detection:
    """One scored box in crop-local pixel coordinates."""

    class_label: str
    score: float
    bbox: Box

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise DomainError(f"score {self.score} outside [0, 1]")
        x_min, y_min, x_max, y_max = self.bbox
        if not (x_min < x_max and y_min < y_max):
            raise DomainError(f"degenerate box {self.bbox}")


@dataclass(frozen=True)
class GlobalDetection:
    """A detection lifted out of its crop.

    ``bbox_mosaic`` is in mosaic pixels; ``nw`` and ``se`` are the
    geographic corners of the same box.  ``zoom`` and ``detector_id``
    record how the detection was produced.
    """

    class_label: str
    score: float
    bbox_mosaic: Box
    nw: GeoPoint
    se: GeoPoint
    zoom: int
    detector_id: str


class DetectorKind(enum.Enum):
    REMOTE_SERVICE = "REMOTE_SERVICE"
    SCRIPTED_MOCK = "SCRIPTED_MOCK"


@dataclass(frozen=True)
class DetectorBackendRef:
    """Which detector to use and how to reach it.

    ``SCRIPTED_MOCK`` answers from a crop-id keyed script and serves
    tests and dry runs.  ``config_tag`` optionally records the training
    configuration (``FE1``..``FE6``) of the remote model.
    """

    kind: DetectorKind
    endpoint: str | None = None
    script: Mapping[str, tuple[Detection, ...]] | None = None
    config_tag: str | None = None

    def __post_init__(self) -> None:
        if self.kind is DetectorKind.REMOTE_SERVICE and not self.endpoint:
            raise ConfigError("REMOTE_SERVICE detector requires an endpoint")
        if self.kind is DetectorKind.SCRIPTED_MOCK and self.script is None:
            raise ConfigError("SCRIPTED_MOCK detector requires a script")
        if self.config_tag is not None and self.config_tag not in {
            f"FE{i}" for i in range(1, 7)
        }:
            raise ConfigError(f"config_tag must be FE1..FE6, got {self.config_tag!r}")


def detection_sort_key(det: Detection):
    return (-det.score, det.class_label, det.bbox)


def _normalise(detections: Iterable[Detection]) -> list[Detection]:
    ordered = sorted(detections, key=detection_sort_key)
    return ordered[:MAX_DETECTIONS]


def _parse_remote(body: dict, crop_id: str) -> list[Detection]:
    try:
        entries = body["detections"]
    except (TypeError, KeyError) as exc:
        raise DetectionError(f"crop {crop_id}: response lacks 'detections'") from exc
    parsed = []
    for entry in entries:
        try:
            label = entry["label"]
            score = float(entry["score"])
            x_min, y_min, x_max, y_max = (float(v) for v in entry["bbox"])
        except (TypeError, KeyError, ValueError) as exc:
            raise DetectionError(f"crop {crop_id}: malformed detection {entry!r}") from exc
        if not all(0.0 <= v <= CROP_SIZE for v in (x_min, y_min, x_max, y_max)):
            raise DetectionError(
                f"crop {crop_id}: box {entry['bbox']} outside the crop extent"
            )
        try:
            parsed.append(
                Detection(class_label=label, score=score, bbox=(x_min, y_min, x_max, y_max))
            )
        except DomainError as exc:
            raise DetectionError(f"crop {crop_id}: {exc}") from exc
    return parsed


def detect(
    crop: Crop,
    backend: DetectorBackendRef,
    detector_id: str,
    http_post: HttpPost | None = None,
    timeout: float = 60.0,
) -> list[Detection]:
    """Detect objects in one crop; output is sorted and capped at 100."""
    if backend.kind is DetectorKind.SCRIPTED_MOCK:
        assert backend.script is not None
        return _normalise(backend.script.get(crop.crop_id, ()))
    post = http_post or default_http_post
    url = backend.endpoint.rstrip("/") + DETECT_PATH
    payload = {"image": crop_payload_b64(crop.pixels), "detector_id": detector_id}
    try:
        body = post(url, payload, timeout)
    except Exception as exc:
        raise DetectionError(f"crop {crop.crop_id}: detect request failed: {exc}") from exc
    return _normalise(_parse_remote(body, crop.crop_id))


def lift_to_global(
    detections: Iterable[Detection], crop: Crop, detector_id: str
) -> list[GlobalDetection]:
    """Translate crop-local detections into mosaic and geographic frames.

    Detections lying entirely inside the crop's zero padding are dropped;
    boxes that straddle the valid boundary are kept unchanged.  The crop
    must know its mosaic origin tile.
    """
    if crop.mosaic_origin is None:
        raise DomainError(f"crop {crop.crop_id} has no mosaic origin")
    origin: TileCoord = crop.mosaic_origin
    ox, oy = crop.offset
    base_px = origin.x * 256.0
    base_py = origin.y * 256.0
    lifted = []
    for det in detections:
        x_min, y_min, x_max, y_max = det.bbox
        if x_min >= crop.valid_width or y_min >= crop.valid_height:
            continue
        mosaic_box = (x_min + ox, y_min + oy, x_max + ox, y_max + oy)
        nw = global_pixel_to_geo(crop.zoom, base_px + mosaic_box[0], base_py + mosaic_box[1])
        se = global_pixel_to_geo(crop.zoom, base_px + mosaic_box[2], base_py + mosaic_box[3])
        lifted.append(
            GlobalDetection(
                class_label=det.class_label,
                score=det.score,
                bbox_mosaic=mosaic_box,
                nw=nw,
                se=se,
                zoom=crop.zoom,
                detector_id=detector_id,
            )
        )
    return lifted


def _global_sort_key(det: GlobalDetection):
    return (-det.score, det.class_label, det.bbox_mosaic)


def merge_nms(
    detections: Iterable[GlobalDetection], iou_threshold: float
) -> list[GlobalDetection]:
    """Greedy per-class suppression of overlapping boxes in the mosaic frame.

    Detections are visited in descending score order (ties broken by
    class label, then box coordinates); each survivor suppresses
    same-class boxes whose IoU with it exceeds the threshold.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise DomainError(f"iou_threshold {iou_threshold} outside (0, 1)")
    ordered = sorted(detections, key=_global_sort_key)
    kept: list[GlobalDetection] = []
    for det in ordered:
        suppressed = any(
            det.class_label == other.class_label
            and iou(det.bbox_mosaic, other.bbox_mosaic) > iou_threshold
            for other in kept
        )
        if not suppressed:
            kept.append(det)
    return kept


def filter_targets(
    detections: Iterable[GlobalDetection], targets: set[str]
) -> list[GlobalDetection]:
    """Keep only detections whose class is in ``targets``."""
    return [d for d in detections if d.class_label in targets]


def to_geojson(detections: Iterable[GlobalDetection]) -> dict:
    """GeoJSON FeatureCollection with one polygon feature per detection.

    Rings are counter-clockwise starting at the north-west corner.
    Feature order follows the input, which after :func:`merge_nms` is the
    deterministic score order.
    """
    features = []
    for det in detections:
        lon_w, lat_n = det.nw.longitude, det.nw.latitude
        lon_e, lat_s = det.se.longitude, det.se.latitude
        ring = [
            [lon_w, lat_n],
            [lon_w, lat_s],
            [lon_e, lat_s],
            [lon_e, lat_n],
            [lon_w, lat_n],
        ]
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {
                    "label": det.class_label,
                    "score": det.score,
                    "zoom": det.zoom,
                    "detector_id": det.detector_id,
                },
            }
        )
    return {"type": "FeatureCollection", "features": features}


def geojson_dumps(document: dict) -> str:
    """Canonical GeoJSON serialisation: sorted keys, two-space indent."""
    return json.dumps(document, sort_keys=True, indent=2) + "\n"
