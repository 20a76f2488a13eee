"""Class catalogs for the two scale regimes.

Each scale interval trains and evaluates against its own label set.  The
small-scale detector additionally trains on auxiliary classes imported
from external aerial corpora; those classes improve feature learning but
are not evaluation targets, so the catalog keeps them separate.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import DomainError
from ..geo import ScaleInterval

SMALL_SCALE_CLASSES = (
    "bridge",
    "electrical substation",
    "harbour",
    "helicopter",
    "plane",
    "storage tank",
)

SMALL_SCALE_AUXILIARY_CLASSES = (
    "baseball diamond",
    "basketball court",
    "ground track field",
    "roundabout",
    "soccer ball field",
    "swimming pool",
    "tennis court",
)

LARGE_SCALE_CLASSES = (
    "airport",
    "bridge",
    "harbour",
    "industrial area",
    "motorway",
    "train station",
)

# Label vocabulary of the DOTA aerial corpus, used when mapping external
# annotations into the small-scale catalog.
DOTA_CLASSES = (
    "baseball diamond",
    "basketball court",
    "bridge",
    "ground track field",
    "harbour",
    "helicopter",
    "large vehicle",
    "plane",
    "roundabout",
    "ship",
    "small vehicle",
    "soccer ball field",
    "storage tank",
    "swimming pool",
    "tennis court",
)


@dataclass(frozen=True)
class ClassCatalog:
    """Label vocabulary for one scale interval.

    ``detection_classes`` are the evaluation targets; ``auxiliary_classes``
    are accepted in training manifests but never reported on.
    """

    interval: ScaleInterval
    detection_classes: tuple[str, ...]
    auxiliary_classes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        overlap = set(self.detection_classes) & set(self.auxiliary_classes)
        if overlap:
            raise DomainError(
                f"classes cannot be both detection and auxiliary: {sorted(overlap)}"
            )

    @property
    def all_classes(self) -> tuple[str, ...]:
        return self.detection_classes + self.auxiliary_classes

    def __contains__(self, label: str) -> bool:
        return label in self.detection_classes or label in self.auxiliary_classes


def small_scale_catalog() -> ClassCatalog:
    return ClassCatalog(
        interval=ScaleInterval.SMALL,
        detection_classes=SMALL_SCALE_CLASSES,
        auxiliary_classes=SMALL_SCALE_AUXILIARY_CLASSES,
    )


def large_scale_catalog() -> ClassCatalog:
    return ClassCatalog(
        interval=ScaleInterval.LARGE,
        detection_classes=LARGE_SCALE_CLASSES,
    )


def catalog_for(interval: ScaleInterval) -> ClassCatalog:
    if interval is ScaleInterval.SMALL:
        return small_scale_catalog()
    if interval is ScaleInterval.LARGE:
        return large_scale_catalog()
    raise DomainError(f"unknown scale interval: {interval!r}")
