"""Resolution-aware two-stage detection over Web Mercator ortho-imagery.

The pipeline classifies each fixed-size crop into one of two scale
intervals by its apparent resolution, routes it to a detector trained
for that interval, and lifts the detections into geographic coordinates.
Submodules: :mod:`~detdsci.geo` (tile math), :mod:`~detdsci.ingest`
(fetching and slicing), :mod:`~detdsci.dataset` (manifest construction),
:mod:`~detdsci.router` and :mod:`~detdsci.detect` (the two stages),
:mod:`~detdsci.metrics` (evaluation), :mod:`~detdsci.pipeline`
(orchestration), :mod:`~detdsci.report` (output bundle).
"""

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
from .errors import (
    AnnotationError,
    AssemblyError,
    ConfigError,
    DecodeError,
    DetDSCIError,
    DetectionError,
    DomainError,
    FetchError,
    RoutingError,
    UnknownClassError,
)
from .geo import (
    GeoPoint,
    ScaleInterval,
    TileCoord,
    geo_to_tile,
    ground_resolution,
    interval_for_zoom,
    nominal_resolution,
    tile_to_geo,
)
from .ingest import (
    CROP_SIZE,
    Crop,
    Mosaic,
    RegionRequest,
    RetryPolicy,
    TileFetcher,
    TileSource,
    assemble_mosaic,
    plan_tiles,
    plan_windows,
    slice_sliding_window,
)
from .metrics import (
    EvalReport,
    ImageEval,
    PRCurve,
    SizeBucket,
    average_precision,
    average_recall,
    build_pr_curve,
    dump_pr_curve_csv,
    evaluate_detections,
    iou,
    match,
    prf1,
    size_bucket,
)
from .pipeline import (
    ArmMode,
    ArmOutcome,
    ArmSpec,
    ComparisonReport,
    PipelineConfig,
    RunRecord,
    RunResult,
    TestCase,
    comparison_from_counts,
    exit_code_for,
    run,
    run_comparison,
)
from .router import (
    DETECTOR_IDS,
    ClassifierBackendRef,
    ClassifierKind,
    ConfusionMatrix,
    RoutingDecision,
    classify_scale,
)

__version__ = "0.1.0"
