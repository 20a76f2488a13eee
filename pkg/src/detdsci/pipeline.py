"""End-to-end orchestration: region in, georeferenced detections out.

A run fetches the tile rectangle for a region, assembles the mosaic,
slices it into crops, routes each crop to a scale-appropriate detector,
lifts the detections into geographic coordinates, fuses overlapping
windows with non-maximum suppression, and writes a GeoJSON feature
collection plus a machine-readable run record.

Determinism contract: given the same configuration and tile bytes, the
GeoJSON and the run record are byte-identical across repetitions and
worker counts.  Crops are processed by a pool but reduced in slicing
order, and timings are kept out of the serialised record.

The module also hosts the comparison harness that runs several arms
(single-detector baselines and the routed two-detector pipeline) over one
test set and reports count-based P/R/F1 per arm with pairwise F1 deltas.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .dataset.annotations import Instance
from .detect import (
    Detection,
    DetectorBackendRef,
    DetectorKind,
    GlobalDetection,
    detect,
    filter_targets,
    geojson_dumps,
    lift_to_global,
    merge_nms,
    to_geojson,
)
from .errors import ConfigError, DetectionError, RoutingError
from .geo import GeoPoint, ScaleInterval
from .ingest import (
    CROP_SIZE,
    Crop,
    RegionRequest,
    RetryPolicy,
    TileFetcher,
    TileSource,
    assemble_mosaic,
    plan_tiles,
    slice_sliding_window,
)
from .metrics import EvalReport, ImageEval, evaluate_detections, prf1
from .router import (
    DETECTOR_IDS,
    ClassifierBackendRef,
    ClassifierKind,
    classify_scale,
)
from .wire import HttpPost

BASE_DETECTOR_ID = "Base_Det"


def _take(data: Mapping, allowed: set[str], context: str) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        keys = ", ".join(f"{context}.{k}" if context else k for k in unknown)
        raise ConfigError(f"unknown config keys: {keys}")


def _point(value, context: str) -> GeoPoint:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{context} must be a [latitude, longitude] pair")
    return GeoPoint(latitude=float(value[0]), longitude=float(value[1]))


def _region_from_dict(data: Mapping) -> RegionRequest:
    _take(data, {"nw", "se", "zoom"}, "region")
    try:
        return RegionRequest(
            north_west=_point(data["nw"], "region.nw"),
            south_east=_point(data["se"], "region.se"),
            zoom=data["zoom"],
        )
    except KeyError as exc:
        raise ConfigError(f"region missing key {exc}") from exc


def _source_from_dict(data: Mapping) -> TileSource:
    _take(
        data,
        {"url_template", "api_key_ref", "rate_limit_per_s", "retry"},
        "tile_source",
    )
    retry = data.get("retry")
    policy = RetryPolicy()
    if retry is not None:
        _take(retry, {"max_attempts", "backoff_base_s"}, "tile_source.retry")
        policy = RetryPolicy(
            max_attempts=retry.get("max_attempts", 3),
            backoff_base_s=retry.get("backoff_base_s", 0.5),
        )
    try:
        return TileSource(
            url_template=data["url_template"],
            api_key_ref=data.get("api_key_ref"),
            rate_limit_per_s=data.get("rate_limit_per_s"),
            retry=policy,
        )
    except KeyError as exc:
        raise ConfigError(f"tile_source missing key {exc}") from exc


def _classifier_from_dict(data: Mapping) -> ClassifierBackendRef:
    _take(data, {"kind", "endpoint", "stub_answer"}, "classifier")
    stub = data.get("stub_answer")
    return ClassifierBackendRef(
        kind=ClassifierKind(data.get("kind", "METADATA_ORACLE")),
        endpoint=data.get("endpoint"),
        stub_answer=ScaleInterval(stub) if stub is not None else None,
    )


def _script_from_dict(data: Mapping) -> dict[str, tuple[Detection, ...]]:
    script: dict[str, tuple[Detection, ...]] = {}
    for crop_id, entries in data.items():
        script[crop_id] = tuple(
            Detection(
                class_label=e["label"],
                score=float(e["score"]),
                bbox=tuple(float(v) for v in e["bbox"]),
            )
            for e in entries
        )
    return script


def _detector_from_dict(data: Mapping, context: str) -> DetectorBackendRef:
    _take(data, {"kind", "endpoint", "script", "config_tag"}, context)
    script = data.get("script")
    return DetectorBackendRef(
        kind=DetectorKind(data.get("kind", "REMOTE_SERVICE")),
        endpoint=data.get("endpoint"),
        script=_script_from_dict(script) if script is not None else None,
        config_tag=data.get("config_tag"),
    )


def _script_to_dict(script: Mapping[str, tuple[Detection, ...]]) -> dict:
    return {
        crop_id: [
            {"label": d.class_label, "score": d.score, "bbox": list(d.bbox)}
            for d in entries
        ]
        for crop_id, entries in script.items()
    }


def _detector_to_dict(ref: DetectorBackendRef) -> dict:
    return {
        "kind": ref.kind.value,
        "endpoint": ref.endpoint,
        "script": _script_to_dict(ref.script) if ref.script is not None else None,
        "config_tag": ref.config_tag,
    }


_CONFIG_KEYS = {
    "region",
    "tile_source",
    "classifier",
    "detectors",
    "stride",
    "score_threshold",
    "nms_iou",
    "parallelism",
    "cache_dir",
    "output_dir",
    "failure_tolerance",
    "force_interval",
    "target_classes",
}


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs; serialisable to and from JSON.

    ``failure_tolerance`` is the accepted fraction of failed crops;
    beyond it the run counts as a partial failure.  ``force_interval``
    bypasses the scale classifier.  ``target_classes`` filters the final
    detections; ``None`` keeps every class.
    """

    region: RegionRequest
    tile_source: TileSource
    classifier: ClassifierBackendRef
    detectors: Mapping[ScaleInterval, DetectorBackendRef]
    stride: int = CROP_SIZE
    score_threshold: float = 0.5
    nms_iou: float = 0.5
    parallelism: int = 4
    cache_dir: str = "cache"
    output_dir: str = "out"
    failure_tolerance: float = 0.0
    force_interval: ScaleInterval | None = None
    target_classes: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not 1 <= self.stride <= CROP_SIZE:
            raise ConfigError(f"stride must be in [1, {CROP_SIZE}]")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ConfigError("score_threshold must be in [0, 1]")
        if not 0.0 < self.nms_iou < 1.0:
            raise ConfigError("nms_iou must be in (0, 1)")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be at least 1")
        if not 0.0 <= self.failure_tolerance <= 1.0:
            raise ConfigError("failure_tolerance must be in [0, 1]")
        required = (
            {self.force_interval} if self.force_interval is not None else set(ScaleInterval)
        )
        missing = [i.value for i in required if i not in self.detectors]
        if missing:
            raise ConfigError(f"no detector configured for interval(s): {missing}")

    @classmethod
    def from_dict(cls, data: Mapping) -> "PipelineConfig":
        _take(data, _CONFIG_KEYS, "")
        try:
            detectors_data = data["detectors"]
            detectors = {
                ScaleInterval(name): _detector_from_dict(ref, f"detectors.{name}")
                for name, ref in detectors_data.items()
            }
            force = data.get("force_interval")
            targets = data.get("target_classes")
            return cls(
                region=_region_from_dict(data["region"]),
                tile_source=_source_from_dict(data["tile_source"]),
                classifier=_classifier_from_dict(data["classifier"]),
                detectors=detectors,
                stride=data.get("stride", CROP_SIZE),
                score_threshold=data.get("score_threshold", 0.5),
                nms_iou=data.get("nms_iou", 0.5),
                parallelism=data.get("parallelism", 4),
                cache_dir=data.get("cache_dir", "cache"),
                output_dir=data.get("output_dir", "out"),
                failure_tolerance=data.get("failure_tolerance", 0.0),
                force_interval=ScaleInterval(force) if force is not None else None,
                target_classes=tuple(targets) if targets is not None else None,
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc

    @classmethod
    def from_json_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: cannot read config: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "region": {
                "nw": [self.region.north_west.latitude, self.region.north_west.longitude],
                "se": [self.region.south_east.latitude, self.region.south_east.longitude],
                "zoom": self.region.zoom,
            },
            "tile_source": {
                "url_template": self.tile_source.url_template,
                "api_key_ref": self.tile_source.api_key_ref,
                "rate_limit_per_s": self.tile_source.rate_limit_per_s,
                "retry": {
                    "max_attempts": self.tile_source.retry.max_attempts,
                    "backoff_base_s": self.tile_source.retry.backoff_base_s,
                },
            },
            "classifier": {
                "kind": self.classifier.kind.value,
                "endpoint": self.classifier.endpoint,
                "stub_answer": (
                    self.classifier.stub_answer.value
                    if self.classifier.stub_answer is not None
                    else None
                ),
            },
            "detectors": {
                interval.value: _detector_to_dict(ref)
                for interval, ref in sorted(
                    self.detectors.items(), key=lambda kv: kv[0].value
                )
            },
            "stride": self.stride,
            "score_threshold": self.score_threshold,
            "nms_iou": self.nms_iou,
            "parallelism": self.parallelism,
            "cache_dir": self.cache_dir,
            "output_dir": self.output_dir,
            "failure_tolerance": self.failure_tolerance,
            "force_interval": (
                self.force_interval.value if self.force_interval is not None else None
            ),
            "target_classes": (
                list(self.target_classes) if self.target_classes is not None else None
            ),
        }

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def config_hash(self) -> str:
        """Hash of the result-affecting configuration.

        Operational knobs (parallelism, directories, rate limits, retry)
        change how a run executes but not what it produces, so they are
        excluded and runs differing only in them share a hash.
        """
        doc = self.to_dict()
        doc.pop("parallelism")
        doc.pop("cache_dir")
        doc.pop("output_dir")
        doc["tile_source"].pop("rate_limit_per_s")
        doc["tile_source"].pop("retry")
        canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


@dataclass
class CropRecord:
    """What happened to one crop during a run."""

    crop_id: str
    offset: tuple[int, int]
    zoom: int
    status: str
    interval: str | None = None
    detector_id: str | None = None
    confidence: float | None = None
    n_detections: int = 0
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "crop_id": self.crop_id,
            "offset": list(self.offset),
            "zoom": self.zoom,
            "status": self.status,
            "interval": self.interval,
            "detector_id": self.detector_id,
            "confidence": self.confidence,
            "n_detections": self.n_detections,
            "error": self.error,
        }


@dataclass
class RunRecord:
    """Deterministic summary of a run plus a wall-clock duration.

    ``to_dict`` omits the duration by default so serialised records from
    identical runs compare equal byte for byte.
    """

    config_hash: str
    zoom: int
    n_tiles: int
    mosaic_width: int
    mosaic_height: int
    crops: list[CropRecord]
    n_detections_raw: int
    n_detections_final: int
    duration_s: float | None = None

    @property
    def n_crops(self) -> int:
        return len(self.crops)

    @property
    def n_failed(self) -> int:
        return sum(1 for c in self.crops if c.status != "ok")

    @property
    def n_ok(self) -> int:
        return self.n_crops - self.n_failed

    def to_dict(self, include_timings: bool = False) -> dict:
        doc = {
            "config_hash": self.config_hash,
            "zoom": self.zoom,
            "n_tiles": self.n_tiles,
            "mosaic_width": self.mosaic_width,
            "mosaic_height": self.mosaic_height,
            "crops": [c.to_dict() for c in self.crops],
            "n_crops": self.n_crops,
            "n_failed": self.n_failed,
            "n_detections_raw": self.n_detections_raw,
            "n_detections_final": self.n_detections_final,
        }
        if include_timings:
            doc["duration_s"] = self.duration_s
        return doc


@dataclass
class RunResult:
    record: RunRecord
    detections: list[GlobalDetection]
    geojson: dict
    geojson_path: Path | None = None
    record_path: Path | None = None

    @property
    def empty(self) -> bool:
        """True when nothing was processed: no tiles planned or no crop succeeded."""
        return self.record.n_tiles == 0 or (
            self.record.n_crops > 0 and self.record.n_ok == 0
        )


def _process_crop(
    crop: Crop,
    config: PipelineConfig,
    http_post: HttpPost | None,
) -> tuple[CropRecord, list[GlobalDetection]]:
    record = CropRecord(
        crop_id=crop.crop_id, offset=crop.offset, zoom=crop.zoom, status="ok"
    )
    try:
        if config.force_interval is not None:
            interval = config.force_interval
            detector_id = DETECTOR_IDS[interval]
            record.confidence = 1.0
        else:
            decision = classify_scale(crop, config.classifier, http_post=http_post)
            interval = decision.interval
            detector_id = decision.detector_id
            record.confidence = decision.confidence
        record.interval = interval.value
        record.detector_id = detector_id
        backend = config.detectors[interval]
        detections = detect(crop, backend, detector_id, http_post=http_post)
        lifted = lift_to_global(detections, crop, detector_id)
        record.n_detections = len(lifted)
        return record, lifted
    except (RoutingError, DetectionError) as exc:
        record.status = "failed"
        record.error = str(exc)
        record.n_detections = 0
        return record, []


def run(
    config: PipelineConfig,
    fetcher: TileFetcher | None = None,
    http_post: HttpPost | None = None,
    write_outputs: bool = True,
) -> RunResult:
    """Execute the full pipeline for one configured region.

    Per-crop routing or detection failures are recorded and skipped;
    anything structural (fetch failures, assembly holes, bad config)
    raises.  When ``write_outputs`` is set, ``detections.geojson`` and
    ``run_record.json`` are written under the configured output
    directory.
    """
    started = time.monotonic()
    if fetcher is None:
        fetcher = TileFetcher(config.tile_source, config.cache_dir)
    tiles = plan_tiles(config.region)
    crops: list[Crop] = []
    mosaic_width = mosaic_height = 0
    if tiles:
        rasters = fetcher.fetch_many(tiles, parallelism=config.parallelism)
        mosaic = assemble_mosaic(rasters)
        mosaic_width, mosaic_height = mosaic.width, mosaic.height
        crops = slice_sliding_window(mosaic, config.stride)
    if crops:
        if config.parallelism == 1:
            outcomes = [_process_crop(c, config, http_post) for c in crops]
        else:
            with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
                outcomes = list(
                    pool.map(lambda c: _process_crop(c, config, http_post), crops)
                )
    else:
        outcomes = []
    records = [record for record, _ in outcomes]
    raw: list[GlobalDetection] = []
    for _, lifted in outcomes:
        raw.extend(lifted)
    scored = [d for d in raw if d.score >= config.score_threshold]
    merged = merge_nms(scored, config.nms_iou)
    if config.target_classes is not None:
        merged = filter_targets(merged, set(config.target_classes))
    geojson = to_geojson(merged)
    record = RunRecord(
        config_hash=config.config_hash(),
        zoom=config.region.zoom,
        n_tiles=len(tiles),
        mosaic_width=mosaic_width,
        mosaic_height=mosaic_height,
        crops=records,
        n_detections_raw=len(raw),
        n_detections_final=len(merged),
        duration_s=time.monotonic() - started,
    )
    result = RunResult(record=record, detections=merged, geojson=geojson)
    if write_outputs:
        out_dir = Path(config.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        geojson_path = out_dir / "detections.geojson"
        geojson_path.write_text(geojson_dumps(geojson))
        record_path = out_dir / "run_record.json"
        record_path.write_text(
            json.dumps(record.to_dict(), sort_keys=True, indent=2) + "\n"
        )
        result.geojson_path = geojson_path
        result.record_path = record_path
    return result


def exit_code_for(result: RunResult, config: PipelineConfig) -> int:
    """Map a run outcome to the documented process exit codes.

    0 success, 2 empty result (nothing could be processed), 3 more crop
    failures than ``failure_tolerance`` allows.
    """
    if result.empty:
        return 2
    record = result.record
    if record.n_crops and record.n_failed / record.n_crops > config.failure_tolerance:
        return 3
    return 0


class ArmMode(enum.Enum):
    """Comparison arms: the routed pipeline and its single-detector baselines."""

    DETDSCI = "DETDSCI"
    BASE_DET = "BASE_DET"
    LS_ONLY = "LS_ONLY"
    SS_ONLY = "SS_ONLY"


_FORCED_INTERVAL = {
    ArmMode.LS_ONLY: ScaleInterval.LARGE,
    ArmMode.SS_ONLY: ScaleInterval.SMALL,
}


@dataclass(frozen=True)
class ArmSpec:
    """Backends for one comparison arm.

    ``DETDSCI`` needs a classifier and one detector per interval; the
    other modes need the single ``detector``.
    """

    mode: ArmMode
    classifier: ClassifierBackendRef | None = None
    detectors: Mapping[ScaleInterval, DetectorBackendRef] | None = None
    detector: DetectorBackendRef | None = None

    def __post_init__(self) -> None:
        if self.mode is ArmMode.DETDSCI:
            if self.classifier is None:
                raise ConfigError("DETDSCI arm requires a classifier")
            if self.detectors is None or set(self.detectors) != set(ScaleInterval):
                raise ConfigError("DETDSCI arm requires detectors for both intervals")
        elif self.detector is None:
            raise ConfigError(f"{self.mode.value} arm requires a detector")


@dataclass
class TestCase:
    """One evaluation crop with its ground truth."""

    # Data holder, not a test class; keep test collectors away.
    __test__ = False

    crop: Crop
    ground_truths: list[Instance]

    @property
    def image_ref(self) -> str:
        return self.crop.crop_id


@dataclass
class ArmOutcome:
    """Result of one arm over the shared test set.

    An arm whose backend failed is reported incomplete with the error
    preserved; its metrics stay ``None`` rather than being fabricated.
    """

    name: str
    mode: ArmMode
    complete: bool
    tp: int | None = None
    fp: int | None = None
    fn: int | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    report: EvalReport | None = None
    error: str | None = None

    @classmethod
    def from_counts(
        cls, name: str, mode: ArmMode, tp: int, fp: int, fn: int
    ) -> "ArmOutcome":
        precision, recall, f1 = prf1(tp, fp, fn)
        return cls(
            name=name,
            mode=mode,
            complete=True,
            tp=tp,
            fp=fp,
            fn=fn,
            precision=precision,
            recall=recall,
            f1=f1,
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "mode": self.mode.value,
            "complete": self.complete,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "error": self.error,
        }


@dataclass
class ComparisonReport:
    """Per-arm outcomes plus pairwise F1 deltas in percentage points."""

    arms: dict[str, ArmOutcome]
    f1_deltas: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "arms": {name: arm.to_dict() for name, arm in sorted(self.arms.items())},
            "f1_deltas_pp": dict(sorted(self.f1_deltas.items())),
        }

    def format_table(self) -> str:
        lines = [
            f"{'arm':<16} {'mode':<10} {'TP':>5} {'FP':>5} {'FN':>5} "
            f"{'P%':>8} {'R%':>8} {'F1%':>8}"
        ]
        for name in sorted(self.arms):
            arm = self.arms[name]
            if not arm.complete:
                lines.append(f"{name:<16} {arm.mode.value:<10} incomplete: {arm.error}")
                continue
            lines.append(
                f"{name:<16} {arm.mode.value:<10} {arm.tp:>5} {arm.fp:>5} {arm.fn:>5} "
                f"{100 * arm.precision:>8.2f} {100 * arm.recall:>8.2f} "
                f"{100 * arm.f1:>8.2f}"
            )
        for pair, delta in sorted(self.f1_deltas.items()):
            lines.append(f"delta F1 {pair}: {delta:+.2f} pp")
        return "\n".join(lines)


def compute_f1_deltas(arms: Mapping[str, ArmOutcome]) -> dict[str, float]:
    """Pairwise F1 differences (percentage points) between complete arms."""
    complete = sorted(name for name, arm in arms.items() if arm.complete)
    deltas: dict[str, float] = {}
    for i, a in enumerate(complete):
        for b in complete[i + 1 :]:
            deltas[f"{a}-vs-{b}"] = 100.0 * (arms[a].f1 - arms[b].f1)
    return deltas


def _arm_detector(
    spec: ArmSpec, crop: Crop, http_post: HttpPost | None
) -> tuple[DetectorBackendRef, str]:
    if spec.mode is ArmMode.DETDSCI:
        decision = classify_scale(crop, spec.classifier, http_post=http_post)
        return spec.detectors[decision.interval], decision.detector_id
    if spec.mode is ArmMode.BASE_DET:
        return spec.detector, BASE_DETECTOR_ID
    interval = _FORCED_INTERVAL[spec.mode]
    return spec.detector, DETECTOR_IDS[interval]


def run_comparison(
    arms: Mapping[str, ArmSpec],
    cases: list[TestCase],
    score_threshold: float = 0.5,
    count_iou_threshold: float = 0.5,
    http_post: HttpPost | None = None,
) -> ComparisonReport:
    """Run every arm over the shared test cases and compare them.

    Arms run sequentially and deterministically; a backend failure marks
    the arm incomplete but does not abort the others.
    """
    outcomes: dict[str, ArmOutcome] = {}
    for name in sorted(arms):
        spec = arms[name]
        images: list[ImageEval] = []
        try:
            for case in cases:
                backend, detector_id = _arm_detector(spec, case.crop, http_post)
                detections = detect(case.crop, backend, detector_id, http_post=http_post)
                images.append(
                    ImageEval(
                        image_ref=case.image_ref,
                        detections=list(detections),
                        ground_truths=list(case.ground_truths),
                    )
                )
        except (RoutingError, DetectionError) as exc:
            outcomes[name] = ArmOutcome(
                name=name, mode=spec.mode, complete=False, error=str(exc)
            )
            continue
        report = evaluate_detections(
            images,
            score_threshold=score_threshold,
            count_iou_threshold=count_iou_threshold,
        )
        outcomes[name] = ArmOutcome(
            name=name,
            mode=spec.mode,
            complete=True,
            tp=report.tp,
            fp=report.fp,
            fn=report.fn,
            precision=report.precision,
            recall=report.recall,
            f1=report.f1,
            report=report,
        )
    return ComparisonReport(arms=outcomes, f1_deltas=compute_f1_deltas(outcomes))


def comparison_from_counts(rows: list[Mapping]) -> ComparisonReport:
    """Build a comparison report from externally measured TP/FP/FN counts.

    Each row needs ``name``, ``mode``, ``tp``, ``fp`` and ``fn``.
    """
    arms: dict[str, ArmOutcome] = {}
    for row in rows:
        try:
            name = row["name"]
            arms[name] = ArmOutcome.from_counts(
                name=name,
                mode=ArmMode(row["mode"]),
                tp=int(row["tp"]),
                fp=int(row["fp"]),
                fn=int(row["fn"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed counts row {row!r}: {exc}") from exc
    return ComparisonReport(arms=arms, f1_deltas=compute_f1_deltas(arms))


def save_detections_per_image(
    detections: Mapping[str, list[Detection]], path: str | Path
) -> None:
    """Write crop-local detections keyed by image reference."""
    doc = {
        "images": {
            ref: [
                {"label": d.class_label, "score": d.score, "bbox": list(d.bbox)}
                for d in dets
            ]
            for ref, dets in sorted(detections.items())
        }
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def load_detections_per_image(path: str | Path) -> dict[str, list[Detection]]:
    """Read a file written by :func:`save_detections_per_image`."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        return {
            ref: [
                Detection(
                    class_label=e["label"],
                    score=float(e["score"]),
                    bbox=tuple(float(v) for v in e["bbox"]),
                )
                for e in entries
            ]
            for ref, entries in doc["images"].items()
        }
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: malformed detections file: {exc}") from exc
