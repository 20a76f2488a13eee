"""First stage: classify a crop's scale interval and pick its detector.

The router never inspects detector outputs; it maps each crop to one of
the two scale intervals and returns the identifier of the detector
trained for that interval.  Three backend kinds exist:

* ``METADATA_ORACLE`` answers from the crop's zoom metadata, which is
  exact by construction and useful as a reference or fallback.
* ``REMOTE_SERVICE`` posts the crop to an image classifier over HTTP
  (``POST {endpoint}/v1/classify-zoom``).
* ``FIXED_STUB`` always answers a configured interval, used for tests
  and single-detector baselines.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import ConfigError, DomainError, RoutingError
from .geo import ScaleInterval, interval_for_zoom
from .ingest import Crop
from .wire import HttpPost, crop_payload_b64, default_http_post

DETECTOR_IDS: dict[ScaleInterval, str] = {
    ScaleInterval.LARGE: "CI-LS_Det_stable",
    ScaleInterval.SMALL: "CI-SS_Det_stable",
}

CLASSIFY_PATH = "/v1/classify-zoom"


class ClassifierKind(enum.Enum):
    METADATA_ORACLE = "METADATA_ORACLE"
    REMOTE_SERVICE = "REMOTE_SERVICE"
    FIXED_STUB = "FIXED_STUB"


@dataclass(frozen=True)
class ClassifierBackendRef:
    """Which scale classifier to use and how to reach it."""

    kind: ClassifierKind
    endpoint: str | None = None
    stub_answer: ScaleInterval | None = None

    def __post_init__(self) -> None:
        if self.kind is ClassifierKind.REMOTE_SERVICE and not self.endpoint:
            raise ConfigError("REMOTE_SERVICE classifier requires an endpoint")
        if self.kind is ClassifierKind.FIXED_STUB and self.stub_answer is None:
            raise ConfigError("FIXED_STUB classifier requires a stub_answer")


@dataclass(frozen=True)
class RoutingDecision:
    """Outcome of stage one for a single crop."""

    interval: ScaleInterval
    confidence: float
    detector_id: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise DomainError(f"confidence {self.confidence} outside [0, 1]")
        expected = DETECTOR_IDS[self.interval]
        if self.detector_id != expected:
            raise DomainError(
                f"detector_id {self.detector_id!r} does not serve the "
                f"{self.interval.value} interval (expected {expected!r})"
            )


def _decision(interval: ScaleInterval, confidence: float) -> RoutingDecision:
    return RoutingDecision(
        interval=interval, confidence=confidence, detector_id=DETECTOR_IDS[interval]
    )


def classify_scale(
    crop: Crop,
    backend: ClassifierBackendRef,
    http_post: HttpPost | None = None,
    timeout: float = 30.0,
) -> RoutingDecision:
    """Classify one crop's scale interval with the given backend."""
    if backend.kind is ClassifierKind.METADATA_ORACLE:
        try:
            interval = interval_for_zoom(crop.zoom)
        except DomainError as exc:
            raise RoutingError(
                f"crop {crop.crop_id}: zoom {crop.zoom} outside the working range"
            ) from exc
        return _decision(interval, 1.0)
    if backend.kind is ClassifierKind.FIXED_STUB:
        assert backend.stub_answer is not None
        return _decision(backend.stub_answer, 1.0)
    post = http_post or default_http_post
    url = backend.endpoint.rstrip("/") + CLASSIFY_PATH
    payload = {"image": crop_payload_b64(crop.pixels)}
    try:
        body = post(url, payload, timeout)
    except Exception as exc:
        raise RoutingError(f"crop {crop.crop_id}: classify request failed: {exc}") from exc
    try:
        interval = ScaleInterval(body["interval"])
        confidence = float(body["confidence"])
        return _decision(interval, confidence)
    except (KeyError, TypeError, ValueError) as exc:
        raise RoutingError(
            f"crop {crop.crop_id}: unusable classify response {body!r}"
        ) from exc


@dataclass(frozen=True)
class ConfusionMatrix:
    """Square count matrix: ``counts[i][j]`` is truth ``labels[i]``
    predicted as ``labels[j]``."""

    labels: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        n = len(self.labels)
        if len(self.counts) != n or any(len(row) != n for row in self.counts):
            raise DomainError("counts must be square and match labels")
        if any(c < 0 for row in self.counts for c in row):
            raise DomainError("counts must be non-negative")

    @classmethod
    def from_pairs(
        cls, pairs: list[tuple[str, str]], labels: tuple[str, ...]
    ) -> "ConfusionMatrix":
        index = {label: i for i, label in enumerate(labels)}
        counts = [[0] * len(labels) for _ in labels]
        for truth, predicted in pairs:
            if truth not in index or predicted not in index:
                raise DomainError(f"pair ({truth!r}, {predicted!r}) outside labels")
            counts[index[truth]][index[predicted]] += 1
        return cls(labels=labels, counts=tuple(tuple(row) for row in counts))

    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    def accuracy(self) -> float:
        total = self.total()
        if total == 0:
            raise DomainError("accuracy undefined for an empty matrix")
        correct = sum(self.counts[i][i] for i in range(len(self.labels)))
        return correct / total
