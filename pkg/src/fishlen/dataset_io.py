"""Annotation, prediction and split handling.

Annotation files are MS-COCO JSON with two attribute extensions:

* ``images[].attributes = {"group": int, "set": "set1" | "set2" | "all"}``
* ``annotations[].attributes = {"fish_id": int, "length_mm": int}``

Images from ``set1``/``set2`` form the *separated* regime, ``all`` the
*touching* regime. If a file stores group/set some other way, pass a custom
``image_attributes`` callable to :func:`load_dataset`.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .maskops import BinaryMask, SegmentationError, rasterize

log = logging.getLogger(__name__)

TEST_GROUPS = frozenset({10, 14, 20, 21, 22})
VALIDATION_GROUPS = frozenset({1, 6, 11, 17, 25})
SET_NAMES = ("set1", "set2", "all")


class DatasetError(ValueError):
    """Malformed file or violated dataset invariant; the message locates the problem."""


class Regime(str, enum.Enum):
    SEPARATED = "separated"
    TOUCHING = "touching"
    COMBINED = "combined"

    def admits(self, set_name: str) -> bool:
        if self is Regime.COMBINED:
            return True
        return (set_name == "all") == (self is Regime.TOUCHING)


@dataclass(frozen=True)
class ImageRecord:
    id: int
    file_name: str
    width: int
    height: int
    group: int
    set_name: str

    @property
    def regime(self) -> Regime:
        return Regime.TOUCHING if self.set_name == "all" else Regime.SEPARATED


@dataclass(frozen=True)
class GtInstance:
    id: int
    image_id: int
    category_id: int
    fish_id: int
    segmentation: object = field(repr=False)
    length_mm: int
    width: int
    height: int

    def mask(self) -> BinaryMask:
        return rasterize(self.segmentation, self.width, self.height)


@dataclass(frozen=True)
class Prediction:
    image_id: int
    category_id: int
    segmentation: object = field(repr=False)
    score: float
    width: int
    height: int
    length_mm: float | None = None

    def mask(self) -> BinaryMask:
        return rasterize(self.segmentation, self.width, self.height)

    def to_dict(self) -> dict:
        d = {
            "image_id": self.image_id,
            "category_id": self.category_id,
            "segmentation": self.segmentation,
            "score": self.score,
        }
        if self.length_mm is not None:
            d["length_mm"] = self.length_mm
        return d


@dataclass(frozen=True)
class DatasetIndex:
    images: tuple[ImageRecord, ...]
    instances: tuple[GtInstance, ...]
    categories: tuple[tuple[int, str], ...]

    @property
    def groups(self) -> dict[int, tuple[int, ...]]:
        out: dict[int, list[int]] = {}
        for im in self.images:
            out.setdefault(im.group, []).append(im.id)
        return {g: tuple(ids) for g, ids in sorted(out.items())}

    @property
    def image_by_id(self) -> dict[int, ImageRecord]:
        return {im.id: im for im in self.images}

    def instances_of(self, image_id: int) -> list[GtInstance]:
        return [a for a in self.instances if a.image_id == image_id]

    def summary(self) -> str:
        return f"{len(self.images)} images, {len(self.instances)} instances, {len(self.categories)} categories"


@dataclass(frozen=True)
class SplitConfig:
    test_groups: frozenset[int] = TEST_GROUPS
    validation_groups: frozenset[int] = VALIDATION_GROUPS
    regime: Regime = Regime.COMBINED

    def __post_init__(self):
        overlap = set(self.test_groups) & set(self.validation_groups)
        if overlap:
            raise ValueError(f"test and validation groups overlap: {sorted(overlap)}")

    def groups(self, part: str, available: Iterable[int]) -> set[int]:
        available = set(available)
        if part == "test":
            return set(self.test_groups)
        if part == "validation":
            return set(self.validation_groups)
        if part == "train":
            return available - set(self.test_groups) - set(self.validation_groups)
        if part == "all":
            return available
        raise ValueError(f"unknown split part {part!r}")


def default_image_attributes(image: Mapping) -> tuple[int, str]:
    attrs = image.get("attributes") or {}
    return int(attrs["group"]), str(attrs["set"])


def _parse_json(path) -> object:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def parse_dataset(
    data: Mapping,
    source: str = "<memory>",
    category_map: Mapping[str, str] | None = None,
    image_attributes: Callable[[Mapping], tuple[int, str]] = default_image_attributes,
) -> DatasetIndex:
    if not isinstance(data, Mapping):
        raise DatasetError(f"{source}: top level must be an object")
    for key in ("images", "annotations", "categories"):
        if not isinstance(data.get(key, []), list):
            raise DatasetError(f"{source}: '{key}' must be an array")

    cats_raw = data.get("categories", [])
    names = {int(c["id"]): str(c["name"]) for c in cats_raw}
    if category_map:
        # relabel, merging categories that map to the same name
        merged: dict[str, int] = {}
        remap: dict[int, int] = {}
        for cid, name in sorted(names.items()):
            new = category_map.get(name, name)
            merged.setdefault(new, len(merged) + 1)
            remap[cid] = merged[new]
        categories = tuple((i, n) for n, i in merged.items())
    else:
        remap = {cid: cid for cid in names}
        categories = tuple(sorted(names.items()))

    images = []
    seen_images: set[int] = set()
    for i, im in enumerate(data.get("images", [])):
        where = f"{source}: images[{i}]"
        try:
            iid = int(im["id"])
            group, set_name = image_attributes(im)
            rec = ImageRecord(iid, str(im.get("file_name", "")), int(im["width"]), int(im["height"]), group, set_name)
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{where}: missing or invalid field ({exc})") from None
        if set_name not in SET_NAMES:
            raise DatasetError(f"{where}: set must be one of {SET_NAMES}, got {set_name!r}")
        if iid in seen_images:
            raise DatasetError(f"{where}: duplicate image id {iid}")
        if rec.width <= 0 or rec.height <= 0:
            raise DatasetError(f"{where}: non-positive dimensions")
        seen_images.add(iid)
        images.append(rec)
    by_id = {im.id: im for im in images}

    instances = []
    fish_group: dict[int, tuple[int, int, int]] = {}  # fish_id -> (group, length, category)
    for i, a in enumerate(data.get("annotations", [])):
        where = f"{source}: annotations[{i}]"
        try:
            attrs = a.get("attributes") or {}
            image_id, cat = int(a["image_id"]), int(a["category_id"])
            fish_id, length = int(attrs["fish_id"]), int(attrs["length_mm"])
            seg = a["segmentation"]
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{where}: missing or invalid field ({exc})") from None
        if image_id not in by_id:
            raise DatasetError(f"{where}: unknown image id {image_id}")
        if cat not in remap:
            raise DatasetError(f"{where}: unknown category id {cat}")
        if length <= 0 or length % 5:
            raise DatasetError(f"{where}: length_mm must be a positive multiple of 5, got {length}")
        im = by_id[image_id]
        key = (im.group, length, remap[cat])
        prev = fish_group.setdefault(fish_id, key)
        if prev[0] != im.group:
            raise DatasetError(f"{where}: fish id {fish_id} appears in groups {prev[0]} and {im.group}")
        if prev != key:
            raise DatasetError(f"{where}: fish id {fish_id} has inconsistent length or category")
        instances.append(
            GtInstance(int(a.get("id", i + 1)), image_id, remap[cat], fish_id, seg, length, im.width, im.height)
        )
    index = DatasetIndex(tuple(images), tuple(instances), categories)
    log.info("%s: %s", source, index.summary())
    return index


def load_dataset(
    path,
    category_map: Mapping[str, str] | None = None,
    image_attributes: Callable[[Mapping], tuple[int, str]] = default_image_attributes,
) -> DatasetIndex:
    """Load an annotation file and check its invariants."""
    return parse_dataset(_parse_json(path), str(path), category_map, image_attributes)


def parse_predictions(data, index: DatasetIndex, source: str = "<memory>", validate_masks: bool = True) -> list[Prediction]:
    if not isinstance(data, list):
        raise DatasetError(f"{source}: prediction file must be a JSON array")
    images = index.image_by_id
    cats = {c for c, _ in index.categories}
    out = []
    for i, p in enumerate(data):
        where = f"{source}: [{i}]"
        try:
            image_id, cat, score = int(p["image_id"]), int(p["category_id"]), float(p["score"])
            seg = p["segmentation"]
            length = p.get("length_mm")
            length = None if length is None else float(length)
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{where}: missing or invalid field ({exc})") from None
        if image_id not in images:
            raise DatasetError(f"{where}: unknown image id {image_id}")
        if cat not in cats:
            raise DatasetError(f"{where}: unknown category id {cat}")
        if not 0.0 <= score <= 1.0:
            raise DatasetError(f"{where}: score {score} outside [0, 1]")
        im = images[image_id]
        pred = Prediction(image_id, cat, seg, score, im.width, im.height, length)
        if validate_masks:
            try:
                empty = not pred.mask()
            except SegmentationError as exc:
                raise DatasetError(f"{where}: {exc}") from None
            if empty:
                raise DatasetError(f"{where}: segmentation decodes to an empty mask")
        out.append(pred)
    return out


def load_predictions(path, index: DatasetIndex, validate_masks: bool = True) -> list[Prediction]:
    return parse_predictions(_parse_json(path), index, str(path), validate_masks)


def save_predictions(preds: Sequence[Prediction], path) -> None:
    Path(path).write_text(json.dumps([p.to_dict() for p in preds]) + "\n", encoding="utf-8")


def select(index: DatasetIndex, groups: Iterable[int] | None = None, regime: Regime | str = Regime.COMBINED) -> DatasetIndex:
    """Sub-index restricted to ``groups`` (all when None) and an image regime."""
    regime = Regime(regime)
    present = set(index.groups)
    wanted = present if groups is None else set(groups)
    missing = wanted - present
    if missing:
        raise DatasetError(f"groups not present in the index: {sorted(missing)}")
    images = tuple(im for im in index.images if im.group in wanted and regime.admits(im.set_name))
    keep = {im.id for im in images}
    instances = tuple(a for a in index.instances if a.image_id in keep)
    return DatasetIndex(images, instances, index.categories)


def select_split(index: DatasetIndex, split: SplitConfig, part: str = "test") -> DatasetIndex:
    return select(index, split.groups(part, index.groups), split.regime)
