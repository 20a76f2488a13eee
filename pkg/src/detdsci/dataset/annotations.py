"""Annotated-image model plus VOC XML and COCO JSON round-trip I/O.

Both formats carry the same information: per-image instance lists with
axis-aligned boxes, plus the image's zoom level (when it has one) and the
corpus it came from.  Oriented boxes are rejected by default because the
pipeline is strictly axis-aligned; callers that accept the information
loss can opt into the axis-aligned hull via ``convert_oriented``.

COCO files written here include a redundant ``xyxy`` corner list next to
the conventional ``bbox`` (x, y, width, height) entry.  Width-based boxes
do not always reconstruct their corners exactly in floating point, and
the corner list keeps the round trip lossless while remaining readable by
standard COCO tooling.
"""

from __future__ import annotations

import enum
import json
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import AnnotationError, DomainError, UnknownClassError
from .catalog import ClassCatalog

Box = tuple[float, float, float, float]


class Source(enum.Enum):
    """Corpus an annotated image originates from."""

    GOOGLE_MAPS = "GOOGLE_MAPS"
    DOTA = "DOTA"
    DIOR = "DIOR"


class AnnotationFormat(enum.Enum):
    VOC_XML = "VOC_XML"
    COCO_JSON = "COCO_JSON"


@dataclass(frozen=True)
class Instance:
    """One labelled axis-aligned box, ``(x_min, y_min, x_max, y_max)`` in pixels."""

    class_label: str
    bbox: Box

    def __post_init__(self) -> None:
        x_min, y_min, x_max, y_max = self.bbox
        if not (x_min < x_max and y_min < y_max):
            raise DomainError(f"degenerate box {self.bbox} for {self.class_label!r}")


@dataclass
class AnnotatedImage:
    """An image reference with its instances and provenance.

    Images from the tile pipeline carry the zoom they were captured at;
    images imported from external corpora have no zoom, so ``zoom`` must
    be ``None`` exactly when ``source`` is not ``GOOGLE_MAPS``.
    """

    image_ref: str
    zoom: int | None
    instances: list[Instance] = field(default_factory=list)
    source: Source = Source.GOOGLE_MAPS

    def __post_init__(self) -> None:
        if self.source is Source.GOOGLE_MAPS:
            if self.zoom is None:
                raise DomainError(f"{self.image_ref}: tile imagery requires a zoom")
            if not 14 <= self.zoom <= 23:
                raise DomainError(f"{self.image_ref}: zoom {self.zoom} outside [14, 23]")
        elif self.zoom is not None:
            raise DomainError(
                f"{self.image_ref}: external imagery ({self.source.value}) "
                "cannot carry a zoom"
            )


def oriented_to_hull(
    cx: float, cy: float, w: float, h: float, angle_deg: float
) -> Box:
    """Axis-aligned hull of a rotated box given as centre, extent, and angle."""
    if w <= 0 or h <= 0:
        raise DomainError("oriented box extents must be positive")
    a = math.radians(angle_deg)
    dx, dy = w / 2.0, h / 2.0
    xs, ys = [], []
    for sx, sy in ((-1, -1), (-1, 1), (1, -1), (1, 1)):
        xs.append(cx + sx * dx * math.cos(a) - sy * dy * math.sin(a))
        ys.append(cy + sx * dx * math.sin(a) + sy * dy * math.cos(a))
    return (min(xs), min(ys), max(xs), max(ys))


_ORIENTED_HINT = (
    "contains oriented boxes; the pipeline is axis-aligned. "
    "Pass convert_oriented=True to replace them with their axis-aligned hull."
)


def _check_catalog(
    images: list[AnnotatedImage], catalog: ClassCatalog | None, allow_unknown: bool
) -> None:
    if catalog is None or allow_unknown:
        return
    offenders = sorted(
        {
            inst.class_label
            for img in images
            for inst in img.instances
            if inst.class_label not in catalog
        }
    )
    if offenders:
        raise UnknownClassError(
            f"labels outside the active catalog: {', '.join(offenders)}",
            offenders=tuple(offenders),
        )


def _require(element: ET.Element, tag: str, path: Path) -> str:
    child = element.find(tag)
    if child is None or child.text is None:
        raise AnnotationError(f"{path}: missing <{tag}>")
    return child.text.strip()


def _load_voc_file(
    path: Path, default_source: Source, convert_oriented: bool
) -> AnnotatedImage:
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise AnnotationError(f"{path}: not well-formed XML: {exc}") from exc
    if root.tag != "annotation":
        raise AnnotationError(f"{path}: root element is <{root.tag}>, not <annotation>")
    filename = _require(root, "filename", path)
    database = root.findtext("source/database")
    source = default_source
    if database:
        try:
            source = Source(database.strip())
        except ValueError as exc:
            raise AnnotationError(f"{path}: unknown source {database!r}") from exc
    zoom_text = root.findtext("zoom")
    zoom = int(zoom_text) if zoom_text not in (None, "") else None
    instances = []
    for obj in root.findall("object"):
        name = _require(obj, "name", path)
        bndbox = obj.find("bndbox")
        robndbox = obj.find("robndbox")
        if robndbox is not None:
            if not convert_oriented:
                raise AnnotationError(f"{path} {_ORIENTED_HINT}")
            bbox = oriented_to_hull(
                float(_require(robndbox, "cx", path)),
                float(_require(robndbox, "cy", path)),
                float(_require(robndbox, "w", path)),
                float(_require(robndbox, "h", path)),
                float(_require(robndbox, "angle", path)),
            )
        elif bndbox is not None:
            bbox = (
                float(_require(bndbox, "xmin", path)),
                float(_require(bndbox, "ymin", path)),
                float(_require(bndbox, "xmax", path)),
                float(_require(bndbox, "ymax", path)),
            )
        else:
            raise AnnotationError(f"{path}: object {name!r} has no box")
        try:
            instances.append(Instance(class_label=name, bbox=bbox))
        except DomainError as exc:
            raise AnnotationError(f"{path}: {exc}") from exc
    try:
        return AnnotatedImage(
            image_ref=filename, zoom=zoom, instances=instances, source=source
        )
    except DomainError as exc:
        raise AnnotationError(f"{path}: {exc}") from exc


def _load_voc(
    path: Path, default_source: Source, convert_oriented: bool
) -> list[AnnotatedImage]:
    if path.is_dir():
        files = sorted(path.glob("*.xml"))
        if not files:
            raise AnnotationError(f"{path}: no .xml files found")
    else:
        files = [path]
    return [_load_voc_file(f, default_source, convert_oriented) for f in files]


def _load_coco(
    path: Path, default_source: Source, convert_oriented: bool
) -> list[AnnotatedImage]:
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"{path}: not valid JSON: {exc}") from exc
    for key in ("images", "annotations", "categories"):
        if key not in doc:
            raise AnnotationError(f"{path}: missing top-level {key!r}")
    categories = {c["id"]: c["name"] for c in doc["categories"]}
    by_image: dict[int, AnnotatedImage] = {}
    order: list[int] = []
    for entry in doc["images"]:
        try:
            image = AnnotatedImage(
                image_ref=entry["file_name"],
                zoom=entry.get("zoom"),
                source=Source(entry.get("source", default_source.value)),
            )
        except (KeyError, ValueError) as exc:
            raise AnnotationError(f"{path}: bad image entry: {exc}") from exc
        by_image[entry["id"]] = image
        order.append(entry["id"])
    for ann in doc["annotations"]:
        image = by_image.get(ann.get("image_id"))
        if image is None:
            raise AnnotationError(
                f"{path}: annotation references unknown image_id {ann.get('image_id')}"
            )
        label = categories.get(ann.get("category_id"))
        if label is None:
            raise AnnotationError(
                f"{path}: annotation references unknown category_id "
                f"{ann.get('category_id')}"
            )
        if "rbbox" in ann:
            if not convert_oriented:
                raise AnnotationError(f"{path} {_ORIENTED_HINT}")
            bbox = oriented_to_hull(*ann["rbbox"])
        elif "xyxy" in ann:
            bbox = tuple(ann["xyxy"])
        elif "bbox" in ann:
            x, y, w, h = ann["bbox"]
            bbox = (x, y, x + w, y + h)
        else:
            raise AnnotationError(f"{path}: annotation for {label!r} has no box")
        try:
            image.instances.append(Instance(class_label=label, bbox=bbox))
        except DomainError as exc:
            raise AnnotationError(f"{path}: {exc}") from exc
    return [by_image[i] for i in order]


def load_annotations(
    path: str | Path,
    format: AnnotationFormat | None = None,
    catalog: ClassCatalog | None = None,
    allow_unknown: bool = False,
    convert_oriented: bool = False,
    default_source: Source = Source.GOOGLE_MAPS,
) -> list[AnnotatedImage]:
    """Load annotations from a VOC XML file/directory or a COCO JSON file.

    ``format`` is inferred from the path when omitted (directories and
    ``.xml`` mean VOC, ``.json`` means COCO).  When ``catalog`` is given,
    labels outside it raise :class:`UnknownClassError` listing every
    offending label, unless ``allow_unknown`` is set.
    """
    path = Path(path)
    if format is None:
        if path.is_dir() or path.suffix.lower() == ".xml":
            format = AnnotationFormat.VOC_XML
        elif path.suffix.lower() == ".json":
            format = AnnotationFormat.COCO_JSON
        else:
            raise AnnotationError(f"{path}: cannot infer annotation format")
    if format is AnnotationFormat.VOC_XML:
        images = _load_voc(path, default_source, convert_oriented)
    else:
        images = _load_coco(path, default_source, convert_oriented)
    _check_catalog(images, catalog, allow_unknown)
    return images


def _voc_element(image: AnnotatedImage) -> ET.Element:
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = image.image_ref
    src = ET.SubElement(root, "source")
    ET.SubElement(src, "database").text = image.source.value
    if image.zoom is not None:
        ET.SubElement(root, "zoom").text = str(image.zoom)
    for inst in image.instances:
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = inst.class_label
        box = ET.SubElement(obj, "bndbox")
        for tag, value in zip(("xmin", "ymin", "xmax", "ymax"), inst.bbox):
            ET.SubElement(box, tag).text = repr(float(value))
    return root


def _save_voc(images: list[AnnotatedImage], path: Path) -> None:
    path.mkdir(parents=True, exist_ok=True)
    for image in images:
        stem = Path(image.image_ref).stem or image.image_ref
        tree = ET.ElementTree(_voc_element(image))
        ET.indent(tree)
        tree.write(path / f"{stem}.xml", encoding="unicode")


def _save_coco(images: list[AnnotatedImage], path: Path) -> None:
    names = sorted({i.class_label for img in images for i in img.instances})
    category_ids = {name: idx + 1 for idx, name in enumerate(names)}
    doc: dict = {
        "images": [],
        "annotations": [],
        "categories": [{"id": cid, "name": name} for name, cid in category_ids.items()],
    }
    ann_id = 1
    for img_id, image in enumerate(images, start=1):
        doc["images"].append(
            {
                "id": img_id,
                "file_name": image.image_ref,
                "zoom": image.zoom,
                "source": image.source.value,
            }
        )
        for inst in image.instances:
            x_min, y_min, x_max, y_max = inst.bbox
            doc["annotations"].append(
                {
                    "id": ann_id,
                    "image_id": img_id,
                    "category_id": category_ids[inst.class_label],
                    "bbox": [x_min, y_min, x_max - x_min, y_max - y_min],
                    "xyxy": list(inst.bbox),
                    "area": (x_max - x_min) * (y_max - y_min),
                    "iscrowd": 0,
                }
            )
            ann_id += 1
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def save_annotations(
    images: list[AnnotatedImage], path: str | Path, format: AnnotationFormat
) -> None:
    """Write annotations; VOC gets one XML per image under ``path`` (a directory),
    COCO a single JSON file at ``path``."""
    path = Path(path)
    if format is AnnotationFormat.VOC_XML:
        _save_voc(images, path)
    else:
        _save_coco(images, path)
