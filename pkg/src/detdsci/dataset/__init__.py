"""Dataset construction: catalogs, annotation I/O, manifests, augmentation."""

from .annotations import (
    AnnotatedImage,
    AnnotationFormat,
    Instance,
    Source,
    load_annotations,
    oriented_to_hull,
    save_annotations,
)
from .augment import (
    BRIGHTNESS_MAX_DELTA,
    CONTRAST_RANGE,
    GRAY_PROBABILITY,
    HUE_MAX_DELTA,
    SATURATION_RANGE,
    SCALE_RANGE,
    AugmentResult,
    DATechnique,
    augment,
)
from .catalog import (
    DOTA_CLASSES,
    LARGE_SCALE_CLASSES,
    SMALL_SCALE_AUXILIARY_CLASSES,
    SMALL_SCALE_CLASSES,
    ClassCatalog,
    catalog_for,
    large_scale_catalog,
    small_scale_catalog,
)
from .manifest import (
    MANIFEST_NAME_RE,
    InstanceCounts,
    SplitManifest,
    ablate_class,
    allowed_steps,
    filter_zoom_combination,
    load_manifest,
    merge_external,
    parse_manifest_name,
    save_manifest,
    summarize_counts,
)

__all__ = [
    "AnnotatedImage",
    "AnnotationFormat",
    "Instance",
    "Source",
    "load_annotations",
    "oriented_to_hull",
    "save_annotations",
    "AugmentResult",
    "DATechnique",
    "augment",
    "BRIGHTNESS_MAX_DELTA",
    "CONTRAST_RANGE",
    "GRAY_PROBABILITY",
    "HUE_MAX_DELTA",
    "SATURATION_RANGE",
    "SCALE_RANGE",
    "ClassCatalog",
    "DOTA_CLASSES",
    "LARGE_SCALE_CLASSES",
    "SMALL_SCALE_AUXILIARY_CLASSES",
    "SMALL_SCALE_CLASSES",
    "catalog_for",
    "large_scale_catalog",
    "small_scale_catalog",
    "InstanceCounts",
    "MANIFEST_NAME_RE",
    "SplitManifest",
    "ablate_class",
    "allowed_steps",
    "filter_zoom_combination",
    "load_manifest",
    "merge_external",
    "parse_manifest_name",
    "save_manifest",
    "summarize_counts",
]
