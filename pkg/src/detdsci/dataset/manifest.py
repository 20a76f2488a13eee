"""Split manifests and the three-step dataset construction operations.

A manifest names one split of one scale-interval dataset and records which
construction step produced it.  Names follow the grammar
``CI-(SS|LS)_(train|test)_(alpha|beta|stable)`` and each name admits a
fixed set of producing steps:

* ``*_train_alpha`` / ``*_test_alpha``: step 1, zoom-combination filtering.
* ``*_train_beta``: step 2, merging external corpora.
* ``*_train_stable``: step 3, ablation and augmentation.
* ``*_test_stable``: step 2 or 3.

``test_beta`` is grammatical but no step may produce it, so it can never
be constructed.  Each operation returns a new manifest stamped with its
own step number; pass ``name`` to move along the chain (for example from
``CI-SS_train_alpha`` to ``CI-SS_train_beta`` when merging).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from ..errors import AnnotationError, DomainError, UnknownClassError
from ..geo import ScaleInterval
from .annotations import AnnotatedImage, Instance, Source

MANIFEST_NAME_RE = re.compile(
    r"CI-(?P<scale>SS|LS)_(?P<split>train|test)_(?P<stage>alpha|beta|stable)\Z"
)

_STEPS_BY_SPLIT_STAGE: dict[tuple[str, str], frozenset[int]] = {
    ("train", "alpha"): frozenset({1}),
    ("test", "alpha"): frozenset({1}),
    ("train", "beta"): frozenset({2}),
    ("test", "beta"): frozenset(),
    ("train", "stable"): frozenset({3}),
    ("test", "stable"): frozenset({2, 3}),
}


def parse_manifest_name(name: str) -> tuple[ScaleInterval, str, str]:
    """Split a manifest name into (scale interval, split, stage)."""
    match = MANIFEST_NAME_RE.match(name)
    if match is None:
        raise DomainError(
            f"manifest name {name!r} does not match "
            "CI-(SS|LS)_(train|test)_(alpha|beta|stable)"
        )
    scale = ScaleInterval.SMALL if match["scale"] == "SS" else ScaleInterval.LARGE
    return scale, match["split"], match["stage"]


def allowed_steps(name: str) -> frozenset[int]:
    """Construction steps that may produce a manifest with this name."""
    _, split, stage = parse_manifest_name(name)
    return _STEPS_BY_SPLIT_STAGE[(split, stage)]


@dataclass
class SplitManifest:
    """One dataset split: a name, the step that produced it, and its entries.

    Entries from the tile pipeline must carry zooms inside the named scale
    interval; external entries carry no zoom.  Image references must be
    unique within a manifest.
    """

    name: str
    step: int
    entries: list[AnnotatedImage] = field(default_factory=list)

    def __post_init__(self) -> None:
        steps = allowed_steps(self.name)
        if self.step not in steps:
            if not steps:
                raise DomainError(f"no construction step may produce {self.name!r}")
            raise DomainError(
                f"step {self.step} cannot produce {self.name!r}; "
                f"allowed: {sorted(steps)}"
            )
        scale = self.scale
        refs: set[str] = set()
        for entry in self.entries:
            if entry.image_ref in refs:
                raise DomainError(f"duplicate image_ref {entry.image_ref!r}")
            refs.add(entry.image_ref)
            if entry.zoom is not None and entry.zoom not in scale.zoom_range:
                raise DomainError(
                    f"{entry.image_ref}: zoom {entry.zoom} outside the "
                    f"{scale.value} interval"
                )

    @property
    def scale(self) -> ScaleInterval:
        return parse_manifest_name(self.name)[0]


@dataclass(frozen=True)
class InstanceCounts:
    """Instance and image counts keyed by (class label, bucket).

    A bucket is ``z{zoom}`` for tile imagery and the source name for
    external imagery, so one table shows how a split is distributed over
    zoom levels and corpora.
    """

    instance_counts: Mapping[tuple[str, str], int]
    image_counts: Mapping[str, int]

    def classes(self) -> list[str]:
        return sorted({label for label, _ in self.instance_counts})

    def buckets(self) -> list[str]:
        found = {bucket for _, bucket in self.instance_counts}
        found.update(self.image_counts)
        zooms = sorted((b for b in found if b.startswith("z")), key=lambda b: int(b[1:]))
        external = sorted(b for b in found if not b.startswith("z"))
        return zooms + external

    def class_total(self, label: str) -> int:
        return sum(n for (c, _), n in self.instance_counts.items() if c == label)

    def bucket_total(self, bucket: str) -> int:
        return sum(n for (_, b), n in self.instance_counts.items() if b == bucket)

    def grand_total(self) -> int:
        return sum(self.instance_counts.values())

    def to_table(self) -> str:
        classes = self.classes()
        buckets = self.buckets()
        header = ["class"] + buckets + ["total"]
        rows = [header]
        for label in classes:
            row = [label]
            for bucket in buckets:
                row.append(str(self.instance_counts.get((label, bucket), 0)))
            row.append(str(self.class_total(label)))
            rows.append(row)
        totals = ["total"] + [str(self.bucket_total(b)) for b in buckets]
        totals.append(str(self.grand_total()))
        rows.append(totals)
        images = ["images"] + [str(self.image_counts.get(b, 0)) for b in buckets]
        images.append(str(sum(self.image_counts.values())))
        rows.append(images)
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = []
        for r in rows:
            cells = [r[0].ljust(widths[0])] + [
                c.rjust(widths[i + 1]) for i, c in enumerate(r[1:])
            ]
            lines.append("  ".join(cells))
        return "\n".join(lines)


def _bucket(entry: AnnotatedImage) -> str:
    if entry.zoom is not None:
        return f"z{entry.zoom}"
    return entry.source.value


def summarize_counts(manifest: SplitManifest) -> InstanceCounts:
    """Count instances per (class, bucket) and images per bucket."""
    instance_counts: dict[tuple[str, str], int] = {}
    image_counts: dict[str, int] = {}
    for entry in manifest.entries:
        bucket = _bucket(entry)
        image_counts[bucket] = image_counts.get(bucket, 0) + 1
        for inst in entry.instances:
            key = (inst.class_label, bucket)
            instance_counts[key] = instance_counts.get(key, 0) + 1
    return InstanceCounts(instance_counts=instance_counts, image_counts=image_counts)


def filter_zoom_combination(
    manifest: SplitManifest, zooms: Iterable[int], name: str | None = None
) -> SplitManifest:
    """Step 1: keep only entries whose zoom is in ``zooms``.

    External entries carry no zoom and are always dropped.  The zoom set
    must be non-empty and lie inside the manifest's scale interval.
    """
    zoom_set = set(zooms)
    if not zoom_set:
        raise DomainError("zoom combination must be non-empty")
    scale = manifest.scale
    bad = sorted(z for z in zoom_set if z not in scale.zoom_range)
    if bad:
        raise DomainError(
            f"zooms {bad} outside the {scale.value} interval "
            f"[{scale.zoom_range.start}, {scale.zoom_range.stop - 1}]"
        )
    kept = [e for e in manifest.entries if e.zoom in zoom_set]
    return SplitManifest(name=name or manifest.name, step=1, entries=kept)


def merge_external(
    manifest: SplitManifest,
    external: list[AnnotatedImage],
    class_map: Mapping[str, str | None],
    name: str | None = None,
) -> SplitManifest:
    """Step 2: append external-corpus images with labels remapped.

    ``class_map`` sends each external label to a catalog label, or to
    ``None`` to drop instances of that label.  A label missing from the
    map raises :class:`UnknownClassError`.  Images whose instances are all
    dropped are not appended, so a map sending everything to ``None``
    leaves the manifest unchanged.
    """
    unmapped = sorted(
        {
            inst.class_label
            for image in external
            for inst in image.instances
            if inst.class_label not in class_map
        }
    )
    if unmapped:
        raise UnknownClassError(
            f"external labels missing from class_map: {', '.join(unmapped)}",
            offenders=tuple(unmapped),
        )
    converted = []
    for image in external:
        if image.source is Source.GOOGLE_MAPS:
            raise DomainError(
                f"{image.image_ref}: merge_external expects external-corpus imagery"
            )
        instances = [
            Instance(class_label=class_map[i.class_label], bbox=i.bbox)
            for i in image.instances
            if class_map[i.class_label] is not None
        ]
        if instances:
            converted.append(
                AnnotatedImage(
                    image_ref=image.image_ref,
                    zoom=None,
                    instances=instances,
                    source=image.source,
                )
            )
    return SplitManifest(
        name=name or manifest.name,
        step=2,
        entries=list(manifest.entries) + converted,
    )


def ablate_class(
    manifest: SplitManifest, class_label: str, name: str | None = None
) -> SplitManifest:
    """Step 3: remove every instance of one class.

    The class must be present in the manifest, so ablating it a second
    time raises.  Images left without instances are kept as negatives.
    """
    present = any(
        inst.class_label == class_label
        for entry in manifest.entries
        for inst in entry.instances
    )
    if not present:
        raise UnknownClassError(
            f"class {class_label!r} has no instances in {manifest.name}",
            offenders=(class_label,),
        )
    entries = [
        AnnotatedImage(
            image_ref=e.image_ref,
            zoom=e.zoom,
            instances=[i for i in e.instances if i.class_label != class_label],
            source=e.source,
        )
        for e in manifest.entries
    ]
    return SplitManifest(name=name or manifest.name, step=3, entries=entries)


def save_manifest(manifest: SplitManifest, path: str | Path) -> None:
    """Write a manifest as JSON."""
    doc = {
        "name": manifest.name,
        "step": manifest.step,
        "entries": [
            {
                "image_ref": e.image_ref,
                "zoom": e.zoom,
                "source": e.source.value,
                "instances": [
                    {"class_label": i.class_label, "bbox": list(i.bbox)}
                    for i in e.instances
                ],
            }
            for e in manifest.entries
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> SplitManifest:
    """Read a manifest written by :func:`save_manifest`."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"{path}: not valid JSON: {exc}") from exc
    try:
        entries = [
            AnnotatedImage(
                image_ref=e["image_ref"],
                zoom=e["zoom"],
                source=Source(e["source"]),
                instances=[
                    Instance(class_label=i["class_label"], bbox=tuple(i["bbox"]))
                    for i in e["instances"]
                ],
            )
            for e in doc["entries"]
        ]
        return SplitManifest(name=doc["name"], step=doc["step"], entries=entries)
    except (KeyError, TypeError, ValueError) as exc:
        raise AnnotationError(f"{path}: malformed manifest: {exc}") from exc
