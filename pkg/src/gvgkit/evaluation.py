"""Grounding metric suite with stratified reporting.

Retrieval and localisation metrics (Top-k, recall at IoU 0.5, mean IoU
of the top-ranked box) are computed over positive instance expressions;
negative accuracy measures abstention quality on manipulated
expressions: a prediction is correct when its top-ranked box has
generalized IoU of at most zero against every annotated instance in the
scene, so the model referred to background rather than to some other
object. Thresholds are inclusive (IoU >= 0.5 is a hit, GIoU <= 0 is a
correct rejection).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gvgkit.datagen import Expression, SceneAnnotation
from gvgkit.geometry import BBox, giou, iou
from gvgkit.synth.predict import PredictionRecord, Predictions

DENSITY_LABELS = ("1-10", "11-20", "21-30", ">30")
SCALE_LABELS = ("tiny", "small", "medium", "large")
KIND_LABELS = ("replace_category", "swap_size", "swap_position")

# the GIoU <= 0 rule is inclusive; exactly-touching boxes may evaluate a
# few ulp off zero after coordinate conversions, so the boundary carries
# a tolerance far below any geometric signal
GIOU_BOUNDARY_TOL = 1e-12


@dataclass
class MetricRow:
    top1: float | None = None
    top5: float | None = None
    r_at_05: float | None = None
    miou: float | None = None
    neg_acc: float | None = None
    support: int = 0          # positive expressions
    target_support: int = 0   # ground-truth targets behind recall
    neg_support: int = 0      # negative expressions


@dataclass
class EvalReport:
    overall: MetricRow
    by_scale: dict[str, MetricRow]      # "tiny/crop", ..., "large/weed"
    by_density: dict[str, MetricRow]
    neg_acc_by_kind: dict[str, MetricRow]
    strict_negatives: bool = False

    def to_dict(self) -> dict:
        def row(r: MetricRow) -> dict:
            return {k: getattr(r, k) for k in
                    ("top1", "top5", "r_at_05", "miou", "neg_acc",
                     "support", "target_support", "neg_support")}
        return {
            "overall": row(self.overall),
            "by_scale": {k: row(v) for k, v in self.by_scale.items()},
            "by_density": {k: row(v) for k, v in self.by_density.items()},
            "neg_acc_by_kind": {k: row(v) for k, v in self.neg_acc_by_kind.items()},
            "strict_negatives": self.strict_negatives,
        }


class _Joined:
    """Predictions joined to their expressions and scenes, boxes in
    normalized coordinates."""

    def __init__(self, predictions: Predictions, scenes: list[SceneAnnotation],
                 expressions: list[Expression]):
        self.scenes = {s.image_id: s for s in scenes}
        self.records = predictions.by_expression()
        self.expressions = expressions

    def boxes_for(self, expr: Expression) -> list[BBox]:
        record = self.records.get(expr.expression_id)
        if record is None:
            return []
        scene = self.scenes[expr.image_id]
        out = []
        for x1, y1, x2, y2 in record.boxes_px:
            out.append(BBox.from_corners(x1 / scene.width, y1 / scene.height,
                                         x2 / scene.width, y2 / scene.height))
        return out

    def target_boxes(self, expr: Expression) -> list[BBox]:
        scene = self.scenes[expr.image_id]
        wanted = set(expr.target_ids)
        return [i.normalized_box(scene.width, scene.height)
                for i in scene.instances if i.instance_id in wanted]

    def scene_boxes(self, expr: Expression) -> list[BBox]:
        scene = self.scenes[expr.image_id]
        return [i.normalized_box(scene.width, scene.height) for i in scene.instances]


def _positive_instance(expressions: list[Expression]) -> list[Expression]:
    return [e for e in expressions
            if e.level == "instance" and e.polarity == "positive"]


def _negative_instance(expressions: list[Expression]) -> list[Expression]:
    return [e for e in expressions
            if e.level == "instance" and e.polarity == "negative"]


def topk(predictions: Predictions, expressions: list[Expression],
         scenes: list[SceneAnnotation], k: int) -> float:
    """Share of positive expressions whose top-k boxes reach IoU >= 0.5
    with some target, in percent."""
    joined = _Joined(predictions, scenes, expressions)
    positives = _positive_instance(expressions)
    if not positives:
        return 0.0
    hits = 0
    for expr in positives:
        boxes = joined.boxes_for(expr)[:k]
        targets = joined.target_boxes(expr)
        if any(iou(b, t) >= 0.5 for b in boxes for t in targets):
            hits += 1
    return 100.0 * hits / len(positives)


def recall_at_05(predictions: Predictions, expressions: list[Expression],
                 scenes: list[SceneAnnotation]) -> float:
    """Share of all ground-truth targets covered at IoU >= 0.5 by any
    proposal of their expression, in percent."""
    joined = _Joined(predictions, scenes, expressions)
    covered = total = 0
    for expr in _positive_instance(expressions):
        boxes = joined.boxes_for(expr)
        for target in joined.target_boxes(expr):
            total += 1
            if any(iou(b, target) >= 0.5 for b in boxes):
                covered += 1
    if total == 0:
        return 0.0
    return 100.0 * covered / total


def mean_iou(predictions: Predictions, expressions: list[Expression],
             scenes: list[SceneAnnotation]) -> float:
    """Mean over positive expressions of the top-ranked box's best IoU
    against the expression's targets, in percent. An expression without
    proposals contributes zero."""
    joined = _Joined(predictions, scenes, expressions)
    positives = _positive_instance(expressions)
    if not positives:
        return 0.0
    values = []
    for expr in positives:
        boxes = joined.boxes_for(expr)
        if not boxes:
            values.append(0.0)
            continue
        targets = joined.target_boxes(expr)
        values.append(max((iou(boxes[0], t) for t in targets), default=0.0))
    return 100.0 * float(np.mean(values))


def neg_acc(predictions: Predictions, expressions: list[Expression],
            scenes: list[SceneAnnotation], strict: bool = False) -> float:
    """Share of negative expressions whose prediction stays on
    background: maximum GIoU against every scene instance <= 0, in
    percent. Judged on the top-ranked box by default; ``strict`` demands
    it of every emitted proposal. Empty scenes count as correct."""
    joined = _Joined(predictions, scenes, expressions)
    negatives = _negative_instance(expressions)
    if not negatives:
        return 0.0
    correct = 0
    for expr in negatives:
        gt_boxes = joined.scene_boxes(expr)
        if not gt_boxes:
            correct += 1
            continue
        boxes = joined.boxes_for(expr)
        judged = boxes if strict else boxes[:1]
        if judged and all(giou(b, g) <= GIOU_BOUNDARY_TOL
                          for b in judged for g in gt_boxes):
            correct += 1
    return 100.0 * correct / len(negatives)


def _metric_row(predictions: Predictions, expressions: list[Expression],
                scenes: list[SceneAnnotation], strict: bool,
                with_negatives: bool = True) -> MetricRow:
    joined = _Joined(predictions, scenes, expressions)
    positives = _positive_instance(expressions)
    negatives = _negative_instance(expressions) if with_negatives else []
    row = MetricRow(support=len(positives), neg_support=len(negatives))
    row.target_support = sum(len(joined.target_boxes(e)) for e in positives)
    if positives:
        row.top1 = topk(predictions, expressions, scenes, 1)
        row.top5 = topk(predictions, expressions, scenes, 5)
        row.r_at_05 = recall_at_05(predictions, expressions, scenes)
        row.miou = mean_iou(predictions, expressions, scenes)
    if negatives:
        row.neg_acc = neg_acc(predictions, expressions, scenes, strict)
    return row


def stratify(predictions: Predictions, scenes: list[SceneAnnotation],
             expressions: list[Expression], strict_negatives: bool = False) -> EvalReport:
    """Full report: overall row, scale x crop/weed and density strata
    over positive expressions, and negative accuracy per manipulation
    kind with its support-weighted average."""
    scene_by_id = {s.image_id: s for s in scenes}
    overall = _metric_row(predictions, expressions, scenes, strict_negatives)

    by_scale = {}
    for size in SCALE_LABELS:
        for group, is_weed in (("crop", False), ("weed", True)):
            subset = [e for e in _positive_instance(expressions)
                      if e.attributes.size_bin == size
                      and (e.attributes.category == "weed") == is_weed]
            by_scale[f"{size}/{group}"] = _metric_row(
                predictions, subset, scenes, strict_negatives, with_negatives=False)

    def density_label(expr: Expression) -> str:
        n = len(scene_by_id[expr.image_id].instances)
        if n <= 10:
            return "1-10"
        if n <= 20:
            return "11-20"
        if n <= 30:
            return "21-30"
        return ">30"

    by_density = {}
    for label in DENSITY_LABELS:
        subset = [e for e in _positive_instance(expressions)
                  if density_label(e) == label]
        by_density[label] = _metric_row(predictions, subset, scenes,
                                        strict_negatives, with_negatives=False)

    neg_by_kind = {}
    weighted_sum = 0.0
    weighted_support = 0
    for kind in KIND_LABELS:
        subset = [e for e in _negative_instance(expressions)
                  if e.negative_kind == kind]
        row = MetricRow(neg_support=len(subset))
        if subset:
            row.neg_acc = neg_acc(predictions, subset, scenes, strict_negatives)
            weighted_sum += row.neg_acc * len(subset)
            weighted_support += len(subset)
        neg_by_kind[kind] = row
    average = MetricRow(neg_support=weighted_support)
    if weighted_support:
        average.neg_acc = weighted_sum / weighted_support
    neg_by_kind["weighted_average"] = average

    return EvalReport(overall=overall, by_scale=by_scale, by_density=by_density,
                      neg_acc_by_kind=neg_by_kind, strict_negatives=strict_negatives)


def _fmt(value: float | None) -> str:
    return "   -  " if value is None else f"{value:6.2f}"


def format_table(report: EvalReport) -> str:
    """Human-readable report mirroring the usual benchmark tables."""
    lines = []
    o = report.overall
    lines.append("Overall")
    lines.append("  Top-1   Top-5   R@0.5   mIoU    Neg-Acc")
    lines.append(f"  {_fmt(o.top1)}  {_fmt(o.top5)}  {_fmt(o.r_at_05)}"
                 f"  {_fmt(o.miou)}  {_fmt(o.neg_acc)}")
    lines.append(f"  positives={o.support} targets={o.target_support} "
                 f"negatives={o.neg_support}")
    lines.append("")
    lines.append("By instance scale (Top-1 | mIoU)")
    lines.append("            Crop             Weed")
    for size in SCALE_LABELS:
        crop = report.by_scale[f"{size}/crop"]
        weed = report.by_scale[f"{size}/weed"]
        lines.append(f"  {size.capitalize():<7} {_fmt(crop.top1)} |{_fmt(crop.miou)}"
                     f"   {_fmt(weed.top1)} |{_fmt(weed.miou)}")
    lines.append("")
    lines.append("By scene density (R@0.5 | mIoU)")
    for label in DENSITY_LABELS:
        row = report.by_density[label]
        lines.append(f"  {label + ' Instances':<16} {_fmt(row.r_at_05)} |{_fmt(row.miou)}"
                     f"   (n={row.support})")
    lines.append("")
    mode = "strict (all proposals)" if report.strict_negatives else "top-1"
    lines.append(f"Negative accuracy by manipulation ({mode})")
    pretty = {"replace_category": "Replace Category", "swap_size": "Swap Size",
              "swap_position": "Swap Position", "weighted_average": "Weighted Average"}
    for kind in (*KIND_LABELS, "weighted_average"):
        row = report.neg_acc_by_kind[kind]
        lines.append(f"  {pretty[kind]:<18} {_fmt(row.neg_acc)}   (n={row.neg_support})")
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, path: str | Path, seed: int,
                 fmt: str = "json") -> None:
    path = Path(path)
    if fmt == "json":
        payload = {"format": "gvgkit-report", "version": 1, "seed": seed}
        payload.update(report.to_dict())
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    elif fmt == "table":
        path.write_text(f"# seed={seed}\n" + format_table(report))
    else:
        raise ValueError(f"unknown report format {fmt!r}")
