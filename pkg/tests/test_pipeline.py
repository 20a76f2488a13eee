"""Configuration handling, end-to-end runs, exit codes, and arm comparisons."""

import json

import pytest

from conftest import FIXTURE_STRIDE, build_script, make_crop
from detdsci.dataset import Instance
from detdsci.detect import Detection, DetectorBackendRef, DetectorKind
from detdsci.errors import ConfigError
from detdsci.geo import ScaleInterval
from detdsci.pipeline import (
    BASE_DETECTOR_ID,
    ArmMode,
    ArmOutcome,
    ArmSpec,
    CropRecord,
    PipelineConfig,
    RunRecord,
    RunResult,
    TestCase,
    comparison_from_counts,
    compute_f1_deltas,
    exit_code_for,
    load_detections_per_image,
    run,
    run_comparison,
    save_detections_per_image,
)
from detdsci.router import ClassifierBackendRef, ClassifierKind

MINIMAL_CONFIG = {
    "region": {"nw": [41.0, 2.0], "se": [40.9, 2.2], "zoom": 19},
    "tile_source": {"url_template": "https://t/{z}/{x}/{y}.png"},
    "classifier": {"kind": "METADATA_ORACLE"},
    "detectors": {
        "SMALL": {"kind": "SCRIPTED_MOCK", "script": {}},
        "LARGE": {"kind": "SCRIPTED_MOCK", "script": {}},
    },
}


def minimal_config(**overrides) -> dict:
    data = json.loads(json.dumps(MINIMAL_CONFIG))
    data.update(overrides)
    return data


# --- configuration ---


def test_from_dict_defaults():
    config = PipelineConfig.from_dict(minimal_config())
    assert config.stride == 2000
    assert config.score_threshold == 0.5
    assert config.nms_iou == 0.5
    assert config.parallelism == 4
    assert config.failure_tolerance == 0.0
    assert config.force_interval is None
    assert config.target_classes is None
    assert config.classifier.kind is ClassifierKind.METADATA_ORACLE


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown config keys: bogus"):
        PipelineConfig.from_dict(minimal_config(bogus=1))
    data = minimal_config()
    data["region"]["elevation"] = 100
    with pytest.raises(ConfigError, match="region.elevation"):
        PipelineConfig.from_dict(data)
    data = minimal_config()
    data["detectors"]["SMALL"]["weights"] = "x"
    with pytest.raises(ConfigError, match="detectors.SMALL.weights"):
        PipelineConfig.from_dict(data)
    data = minimal_config()
    data["tile_source"]["retry"] = {"max_attempts": 2, "jitter": True}
    with pytest.raises(ConfigError, match="tile_source.retry.jitter"):
        PipelineConfig.from_dict(data)


def test_from_dict_missing_sections():
    data = minimal_config()
    del data["region"]
    with pytest.raises(ConfigError, match="malformed config"):
        PipelineConfig.from_dict(data)
    data = minimal_config()
    data["region"]["nw"] = [1.0]
    with pytest.raises(ConfigError, match="latitude, longitude"):
        PipelineConfig.from_dict(data)


def test_config_requires_detectors_for_both_intervals():
    data = minimal_config()
    del data["detectors"]["LARGE"]
    with pytest.raises(ConfigError, match="LARGE"):
        PipelineConfig.from_dict(data)
    # Forcing one interval waives the other detector.
    data["force_interval"] = "SMALL"
    config = PipelineConfig.from_dict(data)
    assert config.force_interval is ScaleInterval.SMALL


def test_config_value_validation():
    for overrides, message in [
        ({"stride": 0}, "stride"),
        ({"stride": 2001}, "stride"),
        ({"score_threshold": 1.5}, "score_threshold"),
        ({"nms_iou": 1.0}, "nms_iou"),
        ({"parallelism": 0}, "parallelism"),
        ({"failure_tolerance": -0.1}, "failure_tolerance"),
    ]:
        with pytest.raises(ConfigError, match=message):
            PipelineConfig.from_dict(minimal_config(**overrides))


def test_config_round_trips_through_dict(scripted_config):
    rebuilt = PipelineConfig.from_dict(scripted_config.to_dict())
    assert rebuilt == scripted_config
    assert rebuilt.config_hash() == scripted_config.config_hash()


def test_config_from_json_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(minimal_config()))
    config = PipelineConfig.from_json_file(path)
    assert config.region.zoom == 19
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="cannot read config"):
        PipelineConfig.from_json_file(bad)
    with pytest.raises(ConfigError, match="cannot read config"):
        PipelineConfig.from_json_file(tmp_path / "absent.json")


def test_config_hash_ignores_operational_knobs(scripted_config):
    reference = scripted_config.config_hash()
    assert scripted_config.replace(parallelism=8).config_hash() == reference
    assert scripted_config.replace(cache_dir="elsewhere").config_hash() == reference
    assert scripted_config.replace(output_dir="elsewhere").config_hash() == reference
    assert scripted_config.replace(stride=500).config_hash() != reference
    assert scripted_config.replace(score_threshold=0.25).config_hash() != reference


# --- end-to-end runs ---


def test_run_full_scripted_region(scripted_config):
    result = run(scripted_config)
    record = result.record
    assert record.n_tiles == 128
    assert (record.mosaic_width, record.mosaic_height) == (4096, 2048)
    assert record.n_crops == 8
    assert record.n_failed == 0
    assert [c.crop_id for c in record.crops] == [
        "z19_x0_y0",
        "z19_x1000_y0",
        "z19_x2000_y0",
        "z19_x2096_y0",
        "z19_x0_y48",
        "z19_x1000_y48",
        "z19_x2000_y48",
        "z19_x2096_y48",
    ]
    for crop_record in record.crops:
        assert crop_record.status == "ok"
        assert crop_record.interval == "SMALL"
        assert crop_record.detector_id == "CI-SS_Det_stable"
        assert crop_record.confidence == 1.0
        assert crop_record.error is None
    assert [c.n_detections for c in record.crops] == [3, 2, 2, 2, 3, 2, 2, 2]
    assert record.n_detections_raw == 18
    # Score filtering removes the 0.45 plane; window duplicates collapse.
    assert record.n_detections_final == 4
    assert [(d.class_label, d.score) for d in result.detections] == [
        ("helicopter", 0.95),
        ("electrical substation", 0.9),
        ("storage tank", 0.8),
        ("bridge", 0.7),
    ]
    assert not result.empty
    assert exit_code_for(result, scripted_config) == 0


def test_run_writes_outputs(scripted_config):
    result = run(scripted_config)
    assert result.geojson_path is not None and result.geojson_path.exists()
    assert result.record_path is not None and result.record_path.exists()
    document = json.loads(result.geojson_path.read_text())
    assert document["type"] == "FeatureCollection"
    assert len(document["features"]) == 4
    record_doc = json.loads(result.record_path.read_text())
    assert record_doc["n_crops"] == 8
    assert record_doc["config_hash"] == scripted_config.config_hash()
    assert "duration_s" not in record_doc


def test_run_without_outputs(scripted_config):
    result = run(scripted_config, write_outputs=False)
    assert result.geojson_path is None and result.record_path is None
    assert result.record.n_detections_final == 4


def test_run_is_deterministic_across_parallelism(scripted_config):
    first = run(scripted_config, write_outputs=False)
    second = run(scripted_config.replace(parallelism=1), write_outputs=False)
    third = run(scripted_config.replace(parallelism=8), write_outputs=False)
    reference = json.dumps(first.record.to_dict(), sort_keys=True)
    assert json.dumps(second.record.to_dict(), sort_keys=True) == reference
    assert json.dumps(third.record.to_dict(), sort_keys=True) == reference
    assert first.geojson == second.geojson == third.geojson


def test_run_respects_target_classes(scripted_config):
    config = scripted_config.replace(target_classes=("bridge", "helicopter"))
    result = run(config, write_outputs=False)
    assert [d.class_label for d in result.detections] == ["helicopter", "bridge"]


def test_run_force_interval_bypasses_classifier(scripted_config):
    # Forcing LARGE sends every crop to the empty large-scale detector.
    config = scripted_config.replace(force_interval=ScaleInterval.LARGE)
    result = run(config, write_outputs=False)
    assert result.record.n_detections_raw == 0
    assert all(c.status == "ok" for c in result.record.crops)
    assert all(c.interval == "LARGE" for c in result.record.crops)
    assert not result.empty
    assert exit_code_for(result, config) == 0


def test_run_records_partial_failures(scripted_config):
    calls = []

    def flaky_post(url, payload, timeout):
        calls.append(url)
        if len(calls) == 3:
            raise OSError("connection reset")
        return {"interval": "SMALL", "confidence": 0.9}

    config = scripted_config.replace(
        classifier=ClassifierBackendRef(
            kind=ClassifierKind.REMOTE_SERVICE, endpoint="http://cls:7000"
        ),
        parallelism=1,
    )
    result = run(config, http_post=flaky_post, write_outputs=False)
    record = result.record
    assert record.n_failed == 1
    failed = [c for c in record.crops if c.status == "failed"]
    assert len(failed) == 1
    assert failed[0].crop_id == "z19_x2000_y0"
    assert "classify request failed" in failed[0].error
    assert failed[0].n_detections == 0
    assert record.n_detections_raw == 16
    assert exit_code_for(result, config) == 3
    tolerant = config.replace(failure_tolerance=0.2)
    assert exit_code_for(result, tolerant) == 0


def test_run_all_crops_failing_is_empty(scripted_config):
    def dead_post(url, payload, timeout):
        raise OSError("no route to host")

    config = scripted_config.replace(
        classifier=ClassifierBackendRef(
            kind=ClassifierKind.REMOTE_SERVICE, endpoint="http://cls:7000"
        ),
    )
    result = run(config, http_post=dead_post, write_outputs=False)
    assert result.record.n_ok == 0
    assert result.empty
    assert exit_code_for(result, config) == 2


def test_run_empty_region(scripted_config, fixture_region):
    inverted = scripted_config.replace(
        region=type(fixture_region)(
            north_west=fixture_region.south_east,
            south_east=fixture_region.north_west,
            zoom=fixture_region.zoom,
        )
    )
    result = run(inverted, write_outputs=False)
    assert result.record.n_tiles == 0
    assert result.record.n_crops == 0
    assert result.empty
    assert exit_code_for(result, inverted) == 2


def test_exit_code_matrix():
    def result_with(n_ok: int, n_failed: int, n_tiles: int = 4) -> RunResult:
        crops = [
            CropRecord(crop_id=f"c{i}", offset=(0, 0), zoom=19, status="ok")
            for i in range(n_ok)
        ] + [
            CropRecord(crop_id=f"f{i}", offset=(0, 0), zoom=19, status="failed")
            for i in range(n_failed)
        ]
        record = RunRecord(
            config_hash="x",
            zoom=19,
            n_tiles=n_tiles,
            mosaic_width=512,
            mosaic_height=512,
            crops=crops,
            n_detections_raw=0,
            n_detections_final=0,
        )
        return RunResult(record=record, detections=[], geojson={})

    config = PipelineConfig.from_dict(minimal_config(failure_tolerance=0.5))
    assert exit_code_for(result_with(4, 0), config) == 0
    assert exit_code_for(result_with(2, 2), config) == 0
    assert exit_code_for(result_with(1, 3), config) == 3
    assert exit_code_for(result_with(0, 4), config) == 2
    assert exit_code_for(result_with(0, 0, n_tiles=0), config) == 2


def test_run_record_serialisation_controls_timing(scripted_config):
    record = run(scripted_config, write_outputs=False).record
    assert record.duration_s is not None
    assert "duration_s" not in record.to_dict()
    assert "duration_s" in record.to_dict(include_timings=True)


# --- comparison arms ---


def airport_detection() -> Detection:
    return Detection(class_label="airport", score=0.9, bbox=(100, 100, 300, 300))


def tank_detection() -> Detection:
    return Detection(class_label="storage tank", score=0.9, bbox=(50, 50, 80, 80))


def comparison_fixture():
    large_crop = make_crop(zoom=16)
    small_crop = make_crop(zoom=19)
    cases = [
        TestCase(
            crop=large_crop,
            ground_truths=[Instance(class_label="airport", bbox=(100, 100, 300, 300))],
        ),
        TestCase(
            crop=small_crop,
            ground_truths=[Instance(class_label="storage tank", bbox=(50, 50, 80, 80))],
        ),
    ]
    ls_backend = DetectorBackendRef(
        kind=DetectorKind.SCRIPTED_MOCK,
        script={large_crop.crop_id: (airport_detection(),)},
    )
    ss_backend = DetectorBackendRef(
        kind=DetectorKind.SCRIPTED_MOCK,
        script={small_crop.crop_id: (tank_detection(),)},
    )
    empty_backend = DetectorBackendRef(kind=DetectorKind.SCRIPTED_MOCK, script={})
    arms = {
        "detdsci": ArmSpec(
            mode=ArmMode.DETDSCI,
            classifier=ClassifierBackendRef(kind=ClassifierKind.METADATA_ORACLE),
            detectors={
                ScaleInterval.LARGE: ls_backend,
                ScaleInterval.SMALL: ss_backend,
            },
        ),
        "ls_only": ArmSpec(mode=ArmMode.LS_ONLY, detector=ls_backend),
        "ss_only": ArmSpec(mode=ArmMode.SS_ONLY, detector=ss_backend),
        "base": ArmSpec(mode=ArmMode.BASE_DET, detector=empty_backend),
    }
    return arms, cases


def test_arm_spec_validation():
    detector = DetectorBackendRef(kind=DetectorKind.SCRIPTED_MOCK, script={})
    with pytest.raises(ConfigError, match="classifier"):
        ArmSpec(mode=ArmMode.DETDSCI, detectors={ScaleInterval.SMALL: detector})
    with pytest.raises(ConfigError, match="both intervals"):
        ArmSpec(
            mode=ArmMode.DETDSCI,
            classifier=ClassifierBackendRef(kind=ClassifierKind.METADATA_ORACLE),
            detectors={ScaleInterval.SMALL: detector},
        )
    with pytest.raises(ConfigError, match="BASE_DET arm requires a detector"):
        ArmSpec(mode=ArmMode.BASE_DET)


def test_routed_arm_combines_per_interval_strengths():
    arms, cases = comparison_fixture()
    report = run_comparison(arms, cases)
    routed = report.arms["detdsci"]
    ls_only = report.arms["ls_only"]
    ss_only = report.arms["ss_only"]
    base = report.arms["base"]
    assert (routed.tp, routed.fp, routed.fn) == (2, 0, 0)
    assert routed.f1 == 1.0
    assert (ls_only.tp, ls_only.fn) == (1, 1)
    assert (ss_only.tp, ss_only.fn) == (1, 1)
    assert ls_only.f1 == pytest.approx(2 / 3)
    assert (base.tp, base.fn) == (0, 2)
    assert base.f1 == 0.0
    # The routed arm scores exactly the union of each specialist's hits
    # on its own interval.
    assert routed.tp == ls_only.tp + ss_only.tp
    assert report.f1_deltas["detdsci-vs-ls_only"] == pytest.approx(100 * (1 - 2 / 3))
    assert report.f1_deltas["base-vs-detdsci"] == pytest.approx(-100.0)


def test_comparison_reports_incomplete_arm_without_aborting():
    arms, cases = comparison_fixture()

    def dead_post(url, payload, timeout):
        raise OSError("unreachable")

    arms = dict(arms)
    arms["remote"] = ArmSpec(
        mode=ArmMode.BASE_DET,
        detector=DetectorBackendRef(
            kind=DetectorKind.REMOTE_SERVICE, endpoint="http://det:1"
        ),
    )
    report = run_comparison(arms, cases, http_post=dead_post)
    remote = report.arms["remote"]
    assert not remote.complete
    assert "detect request failed" in remote.error
    assert remote.f1 is None
    assert report.arms["detdsci"].complete
    assert not any("remote" in pair for pair in report.f1_deltas)
    table = report.format_table()
    assert "incomplete" in table
    assert "delta F1" in table


def test_comparison_from_counts_reproduces_percentages():
    report = comparison_from_counts(
        [
            {"name": "routed", "mode": "DETDSCI", "tp": 83, "fp": 24, "fn": 32},
            {"name": "ls", "mode": "LS_ONLY", "tp": 27, "fp": 3, "fn": 88},
        ]
    )
    routed = report.arms["routed"]
    assert round(100 * routed.f1, 2) == 74.77
    assert round(100 * report.arms["ls"].f1, 2) == 37.24
    assert report.f1_deltas["ls-vs-routed"] == pytest.approx(-37.53, abs=0.005)
    with pytest.raises(ConfigError, match="malformed counts row"):
        comparison_from_counts([{"name": "x", "mode": "DETDSCI", "tp": 1}])


def test_compute_f1_deltas_orders_pairs():
    arms = {
        "b": ArmOutcome.from_counts("b", ArmMode.BASE_DET, tp=1, fp=1, fn=1),
        "a": ArmOutcome.from_counts("a", ArmMode.DETDSCI, tp=3, fp=0, fn=0),
        "c": ArmOutcome("c", ArmMode.SS_ONLY, complete=False, error="x"),
    }
    deltas = compute_f1_deltas(arms)
    assert sorted(deltas) == ["a-vs-b"]
    assert deltas["a-vs-b"] == pytest.approx(100 * (1.0 - 0.5))


def test_comparison_report_to_dict():
    arms, cases = comparison_fixture()
    doc = run_comparison(arms, cases).to_dict()
    assert set(doc) == {"arms", "f1_deltas_pp"}
    assert doc["arms"]["detdsci"]["f1"] == 1.0
    assert doc["arms"]["detdsci"]["mode"] == "DETDSCI"
    assert BASE_DETECTOR_ID == "Base_Det"


def test_detections_per_image_round_trip(tmp_path):
    detections = {
        "z19_x0_y0": [tank_detection()],
        "z16_x0_y0": [airport_detection(), tank_detection()],
    }
    path = tmp_path / "dets.json"
    save_detections_per_image(detections, path)
    assert load_detections_per_image(path) == detections
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    with pytest.raises(ConfigError, match="malformed detections"):
        load_detections_per_image(bad)
