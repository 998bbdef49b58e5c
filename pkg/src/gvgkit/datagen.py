"""Annotation pipeline for the synthetic crop/weed grounding benchmark.

Scenes hold pixel-space instance boxes; the pipeline filters instances
too small to identify, derives discrete attributes (size bin, 3x3 grid
cell), renders template referring expressions with multi-positive
targets, adds image-level absence sentences, manufactures verified
negative expressions for the test split, and writes everything to a
JSON-lines file that round-trips exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gvgkit.geometry import BBox

FORMAT_NAME = "gref-cw-like"
FORMAT_VERSION = 1

CATEGORIES = ("maize", "sugar beet", "bean", "pea", "sunflower", "soy",
              "potato", "pumpkin", "weed")
CROP_CATEGORIES = CATEGORIES[:-1]
WEED_CATEGORY = "weed"

SIZE_BINS = ("tiny", "small", "medium", "large")
# boundaries on sqrt(box area / image area); value on a boundary bins upward
DEFAULT_SIZE_THRESHOLDS = (0.05, 0.12, 0.30)

GRID_ROWS = ("top", "middle", "bottom")
GRID_COLS = ("left", "centre", "right")
GRID_CELLS = tuple(
    "centre" if (r, c) == ("middle", "centre") else f"{r} {c}"
    for r in GRID_ROWS for c in GRID_COLS
)

IMAGE_TYPES = ("crop_only", "weed_only", "mixed", "empty")
NEGATIVE_KINDS = ("replace_category", "swap_size", "swap_position")

MIN_INSTANCE_AREA_PX = 256  # anything smaller is unidentifiable by eye

IMAGE_NEGATIVE_TEXT = {
    "crop_only": "there is no weed in the image",
    "weed_only": "there is no crop in the image",
    "empty": "there is no vegetation in the image",
}


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def grid_cell(box: BBox) -> str:
    """3x3 position name from the normalized box centre; boundary values
    at 1/3 and 2/3 fall into the lower cell."""
    def index(v: float) -> int:
        if v <= 1 / 3:
            return 0
        if v <= 2 / 3:
            return 1
        return 2

    row, col = index(box.cy), index(box.cx)
    if (row, col) == (1, 1):
        return "centre"
    return f"{GRID_ROWS[row]} {GRID_COLS[col]}"


def size_bin(box: BBox, image_w: float, image_h: float,
             thresholds: tuple[float, float, float] = DEFAULT_SIZE_THRESHOLDS) -> str:
    """Scale class from sqrt of the box's share of the image area."""
    pixel_area = (box.w * image_w) * (box.h * image_h)
    r = math.sqrt(max(pixel_area, 0.0) / (image_w * image_h))
    if r < thresholds[0]:
        return "tiny"
    if r < thresholds[1]:
        return "small"
    if r < thresholds[2]:
        return "medium"
    return "large"


@dataclass
class InstanceAnnotation:
    """A single labelled plant: pixel box plus derived attributes."""

    instance_id: int
    category: str
    x1: float
    y1: float
    x2: float
    y2: float
    size_bin: str = ""
    grid_cell: str = ""

    @property
    def pixel_area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def normalized_box(self, image_w: float, image_h: float) -> BBox:
        return BBox.from_corners(self.x1 / image_w, self.y1 / image_h,
                                 self.x2 / image_w, self.y2 / image_h)

    def with_attributes(self, image_w: float, image_h: float,
                        thresholds=DEFAULT_SIZE_THRESHOLDS) -> "InstanceAnnotation":
        box = self.normalized_box(image_w, image_h)
        return InstanceAnnotation(
            instance_id=self.instance_id, category=self.category,
            x1=self.x1, y1=self.y1, x2=self.x2, y2=self.y2,
            size_bin=size_bin(box, image_w, image_h, thresholds),
            grid_cell=grid_cell(box),
        )

    @property
    def triple(self) -> tuple[str, str, str]:
        return (self.category, self.size_bin, self.grid_cell)


def classify_image_type(instances: list[InstanceAnnotation]) -> str:
    has_crop = any(i.category != WEED_CATEGORY for i in instances)
    has_weed = any(i.category == WEED_CATEGORY for i in instances)
    if has_crop and has_weed:
        return "mixed"
    if has_crop:
        return "crop_only"
    if has_weed:
        return "weed_only"
    return "empty"


@dataclass
class SceneAnnotation:
    image_id: str
    width: int
    height: int
    instances: list[InstanceAnnotation] = field(default_factory=list)
    image_type: str = "empty"

    def refresh_type(self) -> None:
        self.image_type = classify_image_type(self.instances)

    def instances_matching(self, category: str, size: str, cell: str) -> list[int]:
        return [i.instance_id for i in self.instances
                if i.triple == (category, size, cell)]


@dataclass
class Attributes:
    category: str
    size_bin: str | None = None
    grid_cell: str | None = None


@dataclass
class Expression:
    expression_id: str
    image_id: str
    text: str
    level: str                      # image | instance
    polarity: str                   # positive | negative
    negative_kind: str              # none | replace_category | swap_size | swap_position
    attributes: Attributes
    target_ids: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.polarity == "negative" and self.target_ids:
            raise ValueError("negative expressions cannot have targets")
        if self.polarity == "positive" and self.level == "instance" and not self.target_ids:
            raise ValueError("positive instance expressions need at least one target")


def instance_template(size: str, category: str, cell: str) -> str:
    return f"the {size} {category} at the {cell} of the image"


def filter_instances(raw: SceneAnnotation,
                     thresholds=DEFAULT_SIZE_THRESHOLDS) -> SceneAnnotation:
    """Drop instances below the identifiability area and re-derive
    attributes and the image type."""
    kept = [inst.with_attributes(raw.width, raw.height, thresholds)
            for inst in raw.instances if inst.pixel_area >= MIN_INSTANCE_AREA_PX]
    scene = SceneAnnotation(image_id=raw.image_id, width=raw.width,
                            height=raw.height, instances=kept)
    scene.refresh_type()
    return scene


def gen_instance_expression(inst: InstanceAnnotation, scene: SceneAnnotation,
                            expression_id: str = "") -> Expression:
    """Positive expression for one instance's attribute triple; targets
    are all scene instances sharing the triple (multi-positive)."""
    category, size, cell = inst.triple
    return Expression(
        expression_id=expression_id or f"{scene.image_id}-pos-{inst.instance_id}",
        image_id=scene.image_id,
        text=instance_template(size, category, cell),
        level="instance",
        polarity="positive",
        negative_kind="none",
        attributes=Attributes(category=category, size_bin=size, grid_cell=cell),
        target_ids=scene.instances_matching(category, size, cell),
    )


def gen_positive_expressions(scene: SceneAnnotation) -> list[Expression]:
    """One expression per distinct attribute triple in the scene."""
    seen: set[tuple[str, str, str]] = set()
    out = []
    for inst in scene.instances:
        if inst.triple in seen:
            continue
        seen.add(inst.triple)
        out.append(gen_instance_expression(
            inst, scene, expression_id=f"{scene.image_id}-pos-{len(out)}"))
    return out


def gen_image_negatives(scene: SceneAnnotation) -> list[Expression]:
    """Image-level absence sentence for single-type and empty scenes;
    mixed scenes have nothing truthfully absent to state."""
    if scene.image_type == "mixed":
        return []
    text = IMAGE_NEGATIVE_TEXT[scene.image_type]
    subject = {"crop_only": "weed", "weed_only": "crop", "empty": "vegetation"}
    return [Expression(
        expression_id=f"{scene.image_id}-imgneg-0",
        image_id=scene.image_id,
        text=text,
        level="image",
        polarity="negative",
        negative_kind="none",
        attributes=Attributes(category=subject[scene.image_type]),
        target_ids=[],
    )]


def _valid_alternatives(scene: SceneAnnotation, triple: tuple[str, str, str],
                        kind: str) -> list[tuple[str, str, str]]:
    category, size, cell = triple
    if kind == "replace_category":
        pool = [(c, size, cell) for c in CATEGORIES if c != category]
    elif kind == "swap_size":
        pool = [(category, s, cell) for s in SIZE_BINS if s != size]
    elif kind == "swap_position":
        pool = [(category, size, g) for g in GRID_CELLS if g != cell]
    else:
        raise ValueError(f"unknown negative kind {kind!r}")
    return [t for t in pool if not scene.instances_matching(*t)]


def gen_test_negatives(scenes: list[SceneAnnotation], seed: int,
                       fraction_per_kind: float = 1 / 3
                       ) -> tuple[list[Expression], dict]:
    """Manufacture instance-level negatives for the test split.

    Candidates are the positive instance expressions of the given
    scenes. For each manipulation kind, a random third of the candidates
    is sampled; each sampled candidate gets one attribute changed to a
    value that matches no instance in its scene (verified by scan).
    Candidates admitting no valid change are skipped and replaced by the
    next sampled one; if the pool runs dry the shortfall is reported in
    the metadata rather than raised.
    """
    rng = np.random.default_rng(seed)
    candidates: list[tuple[SceneAnnotation, Expression]] = []
    for scene in scenes:
        for expr in gen_positive_expressions(scene):
            candidates.append((scene, expr))

    per_kind_target = int(round(len(candidates) * fraction_per_kind))
    negatives: list[Expression] = []
    meta = {"candidates": len(candidates), "per_kind_target": per_kind_target,
            "per_kind_actual": {}, "shortfall": {}}
    for kind in NEGATIVE_KINDS:
        order = rng.permutation(len(candidates))
        produced = 0
        for idx in order:
            if produced >= per_kind_target:
                break
            scene, expr = candidates[idx]
            triple = (expr.attributes.category, expr.attributes.size_bin,
                      expr.attributes.grid_cell)
            options = _valid_alternatives(scene, triple, kind)
            if not options:
                continue
            category, size, cell = options[rng.integers(len(options))]
            negatives.append(Expression(
                expression_id=f"{scene.image_id}-neg-{kind}-{produced}",
                image_id=scene.image_id,
                text=instance_template(size, category, cell),
                level="instance",
                polarity="negative",
                negative_kind=kind,
                attributes=Attributes(category=category, size_bin=size, grid_cell=cell),
                target_ids=[],
            ))
            produced += 1
        meta["per_kind_actual"][kind] = produced
        meta["shortfall"][kind] = per_kind_target - produced
    negatives.sort(key=lambda e: (e.image_id, e.expression_id))
    return negatives, meta


def stratified_split(scenes: list[SceneAnnotation],
                     ratios: tuple[float, float, float] = (0.70, 0.15, 0.15),
                     seed: int = 0) -> tuple[list[SceneAnnotation], ...]:
    """Per-image-type proportional split with largest-remainder rounding,
    so each type deviates from the ratios by at most one scene."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    splits: tuple[list[SceneAnnotation], ...] = ([], [], [])
    for image_type in IMAGE_TYPES:
        group = [s for s in scenes if s.image_type == image_type]
        if not group:
            continue
        order = rng.permutation(len(group))
        group = [group[i] for i in order]
        n = len(group)
        exact = [n * r for r in ratios]
        counts = [int(math.floor(e)) for e in exact]
        remainder = n - sum(counts)
        by_frac = sorted(range(3), key=lambda k: (-(exact[k] - counts[k]), k))
        for k in by_frac[:remainder]:
            counts[k] += 1
        offset = 0
        for k in range(3):
            splits[k].extend(group[offset:offset + counts[k]])
            offset += counts[k]
    for split in splits:
        split.sort(key=lambda s: s.image_id)
    return splits


# ---------------------------------------------------------------------------
# serialization


def _scene_record(scene: SceneAnnotation) -> dict:
    return {
        "record": "scene",
        "image_id": scene.image_id,
        "width": scene.width,
        "height": scene.height,
        "image_type": scene.image_type,
        "instances": [
            {
                "instance_id": i.instance_id,
                "category": i.category,
                "bbox_xyxy_px": [i.x1, i.y1, i.x2, i.y2],
                "size_bin": i.size_bin,
                "grid_cell": i.grid_cell,
            }
            for i in scene.instances
        ],
    }


def _expression_record(expr: Expression) -> dict:
    return {
        "record": "expression",
        "expression_id": expr.expression_id,
        "image_id": expr.image_id,
        "level": expr.level,
        "polarity": expr.polarity,
        "negative_kind": expr.negative_kind,
        "text": expr.text,
        "attributes": {
            "category": expr.attributes.category,
            "size_bin": expr.attributes.size_bin,
            "grid_cell": expr.attributes.grid_cell,
        },
        "target_ids": expr.target_ids,
    }


def write_dataset(scenes: list[SceneAnnotation], expressions: list[Expression],
                  path: str | Path, meta: dict | None = None) -> None:
    header = {"record": "header", "format": FORMAT_NAME, "version": FORMAT_VERSION}
    header.update(meta or {})
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    for scene in scenes:
        lines.append(json.dumps(_scene_record(scene), sort_keys=True,
                                separators=(",", ":")))
    for expr in expressions:
        lines.append(json.dumps(_expression_record(expr), sort_keys=True,
                                separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset(path: str | Path
                 ) -> tuple[list[SceneAnnotation], list[Expression], dict]:
    """Parse a dataset file; raises ParseError with the offending line."""
    scenes: list[SceneAnnotation] = []
    expressions: list[Expression] = []
    meta: dict = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise ParseError(f"invalid JSON ({err.msg})", lineno) from None
            kind = record.get("record")
            if lineno == 1:
                if kind != "header":
                    raise ParseError("first record must be the header", lineno)
                if record.get("format") != FORMAT_NAME:
                    raise ParseError(f"unknown format {record.get('format')!r}", lineno)
                if record.get("version") != FORMAT_VERSION:
                    raise ParseError(
                        f"unsupported version {record.get('version')!r}; "
                        f"this reader handles version {FORMAT_VERSION}", lineno)
                meta = {k: v for k, v in record.items() if k != "record"}
                continue
            if kind == "scene":
                scenes.append(_parse_scene(record, lineno))
            elif kind == "expression":
                expressions.append(_parse_expression(record, lineno))
            else:
                raise ParseError(f"unknown record kind {kind!r}", lineno)
    return scenes, expressions, meta


def _parse_scene(record: dict, lineno: int) -> SceneAnnotation:
    try:
        instances = []
        for spec in record["instances"]:
            if spec["category"] not in CATEGORIES:
                raise ParseError(f"unknown category {spec['category']!r}", lineno)
            x1, y1, x2, y2 = spec["bbox_xyxy_px"]
            instances.append(InstanceAnnotation(
                instance_id=spec["instance_id"], category=spec["category"],
                x1=x1, y1=y1, x2=x2, y2=y2,
                size_bin=spec["size_bin"], grid_cell=spec["grid_cell"]))
        if record["image_type"] not in IMAGE_TYPES:
            raise ParseError(f"unknown image type {record['image_type']!r}", lineno)
        return SceneAnnotation(
            image_id=record["image_id"], width=record["width"],
            height=record["height"], instances=instances,
            image_type=record["image_type"])
    except (KeyError, TypeError, ValueError) as err:
        if isinstance(err, ParseError):
            raise
        raise ParseError(f"malformed scene record ({err})", lineno) from None


def _parse_expression(record: dict, lineno: int) -> Expression:
    try:
        attrs = record["attributes"]
        return Expression(
            expression_id=record["expression_id"], image_id=record["image_id"],
            text=record["text"], level=record["level"], polarity=record["polarity"],
            negative_kind=record["negative_kind"],
            attributes=Attributes(category=attrs["category"],
                                  size_bin=attrs.get("size_bin"),
                                  grid_cell=attrs.get("grid_cell")),
            target_ids=list(record["target_ids"]))
    except (KeyError, TypeError, ValueError) as err:
        if isinstance(err, ParseError):
            raise
        raise ParseError(f"malformed expression record ({err})", lineno) from None
