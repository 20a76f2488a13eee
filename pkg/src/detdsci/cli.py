"""Command-line interface.

Commands mirror the pipeline stages so each can be run and inspected in
isolation: ``fetch`` fills the tile cache, ``slice`` materialises crops,
``route`` and ``detect`` exercise the two stages, ``run`` executes the
whole pipeline, ``eval`` scores detections against ground truth,
``report`` renders the output bundle, and ``build-dataset`` hosts the
manifest construction steps.

Exit codes: 0 success, 1 invalid arguments/config or command failure,
2 empty result (nothing could be processed), 3 crop failures beyond the
configured tolerance.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dataset.annotations import AnnotationFormat, Source, load_annotations
from .dataset.augment import DATechnique, augment
from .dataset.manifest import (
    ablate_class,
    filter_zoom_combination,
    load_manifest,
    merge_external,
    save_manifest,
    summarize_counts,
)
from .detect import detect as run_detect
from .errors import ConfigError, DetDSCIError
from .geo import ScaleInterval, TileCoord
from .ingest import (
    Crop,
    TileFetcher,
    assemble_mosaic,
    decode_image,
    encode_png,
    plan_tiles,
    slice_sliding_window,
)
from .metrics import ImageEval, evaluate_detections
from .pipeline import (
    PipelineConfig,
    comparison_from_counts,
    exit_code_for,
    load_detections_per_image,
    run,
    save_detections_per_image,
)
from .report import write_report
from .router import DETECTOR_IDS, classify_scale

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with code 1, matching the documented codes."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    if args.config is None:
        raise ConfigError("this command requires --config")
    config = PipelineConfig.from_json_file(args.config)
    overrides = {}
    if args.cache_dir is not None:
        overrides["cache_dir"] = args.cache_dir
    if args.parallelism is not None:
        overrides["parallelism"] = args.parallelism
    if args.stride is not None:
        overrides["stride"] = args.stride
    if args.score_threshold is not None:
        overrides["score_threshold"] = args.score_threshold
    if args.nms_iou is not None:
        overrides["nms_iou"] = args.nms_iou
    if args.force_interval is not None:
        overrides["force_interval"] = ScaleInterval(args.force_interval)
    return config.replace(**overrides) if overrides else config


def _cmd_fetch(args: argparse.Namespace) -> int:
    config = _load_config(args)
    tiles = plan_tiles(config.region)
    if not tiles:
        print("region plans no tiles")
        return 2
    fetcher = TileFetcher(config.tile_source, config.cache_dir)
    fetcher.fetch_many(tiles, parallelism=config.parallelism)
    print(f"fetched {len(tiles)} tiles into {config.cache_dir}")
    return 0


def _cmd_slice(args: argparse.Namespace) -> int:
    config = _load_config(args)
    tiles = plan_tiles(config.region)
    if not tiles:
        print("region plans no tiles")
        return 2
    fetcher = TileFetcher(config.tile_source, config.cache_dir)
    rasters = fetcher.fetch_many(tiles, parallelism=config.parallelism)
    mosaic = assemble_mosaic(rasters)
    crops = slice_sliding_window(mosaic, config.stride)
    out_dir = Path(args.out or Path(config.output_dir) / "crops")
    out_dir.mkdir(parents=True, exist_ok=True)
    index = {
        "zoom": mosaic.zoom,
        "origin": [mosaic.origin.z, mosaic.origin.x, mosaic.origin.y],
        "crops": [],
    }
    for crop in crops:
        (out_dir / f"{crop.crop_id}.png").write_bytes(encode_png(crop.pixels))
        index["crops"].append(
            {
                "crop_id": crop.crop_id,
                "offset": list(crop.offset),
                "valid_width": crop.valid_width,
                "valid_height": crop.valid_height,
            }
        )
    (out_dir / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(crops)} crops to {out_dir}")
    return 0


def _load_crops(crops_dir: str | Path) -> list[Crop]:
    crops_dir = Path(crops_dir)
    index_path = crops_dir / "index.json"
    if not index_path.exists():
        raise ConfigError(f"{crops_dir}: missing index.json (produce it with 'slice')")
    index = json.loads(index_path.read_text())
    origin = TileCoord(*index["origin"])
    crops = []
    for entry in index["crops"]:
        pixels = decode_image((crops_dir / f"{entry['crop_id']}.png").read_bytes())
        crops.append(
            Crop(
                pixels=pixels,
                offset=tuple(entry["offset"]),
                zoom=index["zoom"],
                valid_width=entry["valid_width"],
                valid_height=entry["valid_height"],
                mosaic_origin=origin,
            )
        )
    return crops


def _cmd_route(args: argparse.Namespace) -> int:
    config = _load_config(args)
    crops = _load_crops(args.crops)
    rows = []
    for crop in crops:
        if config.force_interval is not None:
            interval = config.force_interval
            rows.append(
                {
                    "crop_id": crop.crop_id,
                    "interval": interval.value,
                    "confidence": 1.0,
                    "detector_id": DETECTOR_IDS[interval],
                }
            )
            continue
        decision = classify_scale(crop, config.classifier)
        rows.append(
            {
                "crop_id": crop.crop_id,
                "interval": decision.interval.value,
                "confidence": decision.confidence,
                "detector_id": decision.detector_id,
            }
        )
    doc = {"decisions": rows}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"routed {len(rows)} crops -> {out}")
    return 0


def _cmd_detect(args: argparse.Namespace) -> int:
    config = _load_config(args)
    crops = _load_crops(args.crops)
    per_image = {}
    for crop in crops:
        if config.force_interval is not None:
            interval = config.force_interval
            detector_id = DETECTOR_IDS[interval]
        else:
            decision = classify_scale(crop, config.classifier)
            interval = decision.interval
            detector_id = decision.detector_id
        detections = run_detect(crop, config.detectors[interval], detector_id)
        per_image[crop.crop_id] = [
            d for d in detections if d.score >= config.score_threshold
        ]
    out = Path(args.out)
    save_detections_per_image(per_image, out)
    total = sum(len(v) for v in per_image.values())
    print(f"detected {total} objects over {len(per_image)} crops -> {out}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args)
    result = run(config)
    record = result.record
    print(
        f"tiles={record.n_tiles} crops={record.n_crops} failed={record.n_failed} "
        f"detections={record.n_detections_final}"
    )
    if result.geojson_path is not None:
        print(f"geojson: {result.geojson_path}")
        print(f"record:  {result.record_path}")
    return exit_code_for(result, config)


def _cmd_eval(args: argparse.Namespace) -> int:
    if args.arm_counts is not None:
        rows = json.loads(Path(args.arm_counts).read_text())
        report = comparison_from_counts(rows)
        print(report.format_table())
        if args.out:
            out = Path(args.out)
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
            print(f"comparison report -> {out}")
        return 0
    if args.detections is None or args.ground_truth is None:
        raise ConfigError("eval requires --detections and --ground-truth, or --arm-counts")
    per_image = load_detections_per_image(args.detections)
    manifest = load_manifest(args.ground_truth)
    score_threshold = args.score_threshold if args.score_threshold is not None else 0.5
    iou_threshold = args.iou if args.iou is not None else 0.5
    images = [
        ImageEval(
            image_ref=entry.image_ref,
            detections=list(per_image.get(entry.image_ref, [])),
            ground_truths=list(entry.instances),
        )
        for entry in manifest.entries
    ]
    report = evaluate_detections(
        images, score_threshold=score_threshold, count_iou_threshold=iou_threshold
    )
    print(report.format_table())
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        print(f"eval report -> {out}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    eval_report = json.loads(Path(args.eval).read_text()) if args.eval else None
    comparison = json.loads(Path(args.comparison).read_text()) if args.comparison else None
    run_record = json.loads(Path(args.run_record).read_text()) if args.run_record else None
    written = write_report(
        args.out,
        eval_report=eval_report,
        comparison=comparison,
        run_record=run_record,
    )
    for path in written:
        print(path)
    return 0


def _cmd_filter_zooms(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    zooms = [int(z) for z in args.zooms.split(",") if z.strip()]
    result = filter_zoom_combination(manifest, zooms, name=args.name)
    save_manifest(result, args.out)
    print(f"{result.name}: kept {len(result.entries)} of {len(manifest.entries)} entries")
    return 0


def _cmd_merge_external(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    class_map = json.loads(Path(args.class_map).read_text())
    fmt = AnnotationFormat[args.format] if args.format else None
    external = load_annotations(
        args.external,
        format=fmt,
        convert_oriented=args.convert_oriented,
        default_source=Source(args.source),
    )
    result = merge_external(manifest, external, class_map, name=args.name)
    save_manifest(result, args.out)
    added = len(result.entries) - len(manifest.entries)
    print(f"{result.name}: merged {added} external images")
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    result = ablate_class(manifest, args.class_label, name=args.name)
    save_manifest(result, args.out)
    print(f"{result.name}: ablated {args.class_label!r}")
    print(summarize_counts(result).to_table())
    return 0


def _cmd_augment(args: argparse.Namespace) -> int:
    technique = DATechnique[args.technique]
    image = decode_image(Path(args.image).read_bytes())
    result = augment(image, technique, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if result.image.dtype == np.uint8:
        out.write_bytes(encode_png(result.image))
    else:
        np.save(out, result.image)
    if result.scale_factor is not None:
        print(f"scale factor: {result.scale_factor}")
    print(f"{technique.name} ({technique.value}) -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="detdsci", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="pipeline config JSON")
    parser.add_argument("--cache-dir", help="tile cache directory override")
    parser.add_argument("--parallelism", type=int, help="worker count override")
    parser.add_argument("--stride", type=int, help="sliding-window stride override")
    parser.add_argument(
        "--score-threshold", type=float, help="detection score threshold override"
    )
    parser.add_argument("--nms-iou", type=float, help="suppression IoU override")
    parser.add_argument(
        "--force-interval",
        choices=[i.value for i in ScaleInterval],
        help="bypass the scale classifier",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download the region's tiles into the cache")
    p.set_defaults(func=_cmd_fetch)

    p = sub.add_parser("slice", help="assemble the mosaic and write crops")
    p.add_argument("--out", help="crop output directory")
    p.set_defaults(func=_cmd_slice)

    p = sub.add_parser("route", help="classify crops into scale intervals")
    p.add_argument("--crops", required=True, help="crop directory from 'slice'")
    p.add_argument("--out", required=True, help="routing decisions JSON")
    p.set_defaults(func=_cmd_route)

    p = sub.add_parser("detect", help="run detection over sliced crops")
    p.add_argument("--crops", required=True, help="crop directory from 'slice'")
    p.add_argument("--out", required=True, help="per-crop detections JSON")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("run", help="execute the full pipeline")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("--detections", help="per-crop detections JSON")
    p.add_argument("--ground-truth", help="ground-truth manifest JSON")
    p.add_argument("--iou", type=float, help="matching IoU threshold (default 0.5)")
    p.add_argument(
        "--arm-counts", help="JSON rows of externally measured arm TP/FP/FN counts"
    )
    p.add_argument("--out", help="write the report JSON here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="render the report bundle with figures")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--eval", help="eval report JSON")
    p.add_argument("--comparison", help="comparison report JSON")
    p.add_argument("--run-record", help="run record JSON")
    p.set_defaults(func=_cmd_report)

    build = sub.add_parser("build-dataset", help="manifest construction steps")
    build_sub = build.add_subparsers(dest="build_command", required=True)

    p = build_sub.add_parser("filter-zooms", help="step 1: keep a zoom combination")
    p.add_argument("--manifest", required=True)
    p.add_argument("--zooms", required=True, help="comma-separated zoom levels")
    p.add_argument("--name", help="name for the resulting manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_filter_zooms)

    p = build_sub.add_parser("merge-external", help="step 2: merge an external corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--external", required=True, help="VOC directory or COCO JSON")
    p.add_argument("--format", choices=[f.name for f in AnnotationFormat])
    p.add_argument(
        "--source",
        default=Source.DOTA.value,
        choices=[s.value for s in Source if s is not Source.GOOGLE_MAPS],
    )
    p.add_argument("--class-map", required=True, help="JSON label map (null drops)")
    p.add_argument(
        "--convert-oriented",
        action="store_true",
        help="replace oriented boxes with their axis-aligned hull",
    )
    p.add_argument("--name", help="name for the resulting manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_merge_external)

    p = build_sub.add_parser("ablate", help="step 3: remove one class")
    p.add_argument("--manifest", required=True)
    p.add_argument("--class", dest="class_label", required=True)
    p.add_argument("--name", help="name for the resulting manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = build_sub.add_parser("augment", help="apply one DA technique to an image")
    p.add_argument("--image", required=True)
    p.add_argument("--technique", required=True, choices=[t.name for t in DATechnique])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_augment)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DetDSCIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
