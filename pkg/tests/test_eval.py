import numpy as np
import pytest

from gvgkit.datagen import (
    Attributes,
    Expression,
    InstanceAnnotation,
    SceneAnnotation,
    filter_instances,
)
from gvgkit.evaluation import (
    EvalReport,
    format_table,
    mean_iou,
    neg_acc,
    recall_at_05,
    stratify,
    topk,
)
from gvgkit.synth.predict import PredictionRecord, Predictions

import reference_metrics as ref

IMG = 100  # micro-scene image size in px


def scene_with(image_id, inst_boxes, categories=None):
    cats = categories or ["maize"] * len(inst_boxes)
    raw = SceneAnnotation(image_id=image_id, width=IMG, height=IMG, instances=[
        InstanceAnnotation(instance_id=k, category=cats[k],
                           x1=b[0], y1=b[1], x2=b[2], y2=b[3])
        for k, b in enumerate(inst_boxes)
    ])
    return filter_instances(raw)


def positive_expr(expr_id, image_id, target_ids, size="small", cat="maize",
                  cell="top left"):
    return Expression(expression_id=expr_id, image_id=image_id,
                      text=f"the {size} {cat} at the {cell} of the image",
                      level="instance", polarity="positive", negative_kind="none",
                      attributes=Attributes(cat, size, cell), target_ids=target_ids)


def negative_expr(expr_id, image_id, kind="replace_category"):
    return Expression(expression_id=expr_id, image_id=image_id,
                      text="the small pea at the top left of the image",
                      level="instance", polarity="negative", negative_kind=kind,
                      attributes=Attributes("pea", "small", "top left"),
                      target_ids=[])


def record(expr_id, image_id, boxes, scores):
    order = np.argsort(-np.asarray(scores), kind="stable")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    return PredictionRecord(expression_id=expr_id, image_id=image_id,
                            level0_class=0, boxes_px=boxes[order],
                            scores=np.asarray(scores, dtype=np.float64)[order])


class TestBasicMetrics:
    def test_exact_top1_hit(self):
        scene = scene_with("a", [(10, 10, 40, 40)])
        expr = positive_expr("e0", "a", [0])
        preds = Predictions(records=[record("e0", "a", [(10, 10, 40, 40)], [5.0])])
        assert topk(preds, [expr], [scene], 1) == 100.0
        assert mean_iou(preds, [expr], [scene]) == pytest.approx(100.0)

    def test_rank3_hit_is_top5_only(self):
        scene = scene_with("a", [(10, 10, 40, 40)])
        expr = positive_expr("e0", "a", [0])
        boxes = [(60, 60, 90, 90), (60, 10, 90, 40), (10, 10, 40, 40)]
        preds = Predictions(records=[record("e0", "a", boxes, [3.0, 2.0, 1.0])])
        assert topk(preds, [expr], [scene], 1) == 0.0
        assert topk(preds, [expr], [scene], 5) == 100.0

    def test_iou_exactly_half_is_hit(self):
        scene = scene_with("a", [(0, 0, 40, 40)])
        expr = positive_expr("e0", "a", [0])
        # half-width box: inter 800, union 1600, IoU exactly 0.5
        preds = Predictions(records=[record("e0", "a", [(0, 0, 20, 40)], [1.0])])
        assert topk(preds, [expr], [scene], 1) == 100.0

    def test_recall_counts_targets(self):
        scene = scene_with("a", [(10, 10, 40, 40), (60, 60, 90, 90)])
        expr = positive_expr("e0", "a", [0, 1])
        both = [(10, 10, 40, 40), (60, 60, 90, 90)]
        preds = Predictions(records=[record("e0", "a", both, [1.0, 0.5])])
        assert recall_at_05(preds, [expr], [scene]) == 100.0
        preds = Predictions(records=[record("e0", "a", both[:1], [1.0])])
        assert recall_at_05(preds, [expr], [scene]) == 50.0
        far = [(0, 60, 5, 65)]
        preds = Predictions(records=[record("e0", "a", far, [1.0])])
        assert recall_at_05(preds, [expr], [scene]) == 0.0

    def test_mean_iou_partial(self):
        # geometry example: IoU 1/7
        scene = scene_with("a", [(0, 0, 20, 20)])
        expr = positive_expr("e0", "a", [0])
        preds = Predictions(records=[record("e0", "a", [(10, 10, 30, 30)], [1.0])])
        assert mean_iou(preds, [expr], [scene]) == pytest.approx(100 / 7, abs=1e-9)

    def test_missing_prediction_counts_as_miss(self):
        scene = scene_with("a", [(10, 10, 40, 40)])
        expr = positive_expr("e0", "a", [0])
        preds = Predictions(records=[])
        assert topk(preds, [expr], [scene], 1) == 0.0
        assert mean_iou(preds, [expr], [scene]) == 0.0


class TestNegAcc:
    def test_three_crafted_cases(self):
        scene = scene_with("a", [(40, 40, 60, 60)])
        neg = negative_expr("n0", "a")
        disjoint = Predictions(records=[record("n0", "a", [(70, 70, 90, 90)], [1.0])])
        overlapping = Predictions(records=[record("n0", "a", [(45, 45, 65, 65)], [1.0])])
        touching = Predictions(records=[record("n0", "a", [(60, 40, 80, 60)], [1.0])])
        assert neg_acc(disjoint, [neg], [scene]) == 100.0
        assert neg_acc(overlapping, [neg], [scene]) == 0.0
        assert neg_acc(touching, [neg], [scene]) == 100.0

    def test_empty_scene_counts_correct(self):
        scene = scene_with("a", [])
        neg = negative_expr("n0", "a")
        preds = Predictions(records=[record("n0", "a", [(1, 1, 20, 20)], [1.0])])
        assert neg_acc(preds, [neg], [scene]) == 100.0

    def test_strict_mode_judges_all_proposals(self):
        scene = scene_with("a", [(40, 40, 60, 60)])
        neg = negative_expr("n0", "a")
        boxes = [(70, 70, 90, 90), (45, 45, 65, 65)]  # top-1 clean, rank-2 overlaps
        preds = Predictions(records=[record("n0", "a", boxes, [2.0, 1.0])])
        assert neg_acc(preds, [neg], [scene]) == 100.0
        assert neg_acc(preds, [neg], [scene], strict=True) == 0.0

    def test_monotone_score_transform_invariance(self):
        rng = np.random.default_rng(0)
        scene = scene_with("a", [(40, 40, 60, 60)])
        neg = negative_expr("n0", "a")
        boxes = rng.integers(0, 80, size=(6, 2))
        boxes = [(int(x), int(y), int(x) + 15, int(y) + 15) for x, y in boxes]
        scores = rng.normal(size=6)
        base = neg_acc(Predictions(records=[record("n0", "a", boxes, scores)]),
                       [neg], [scene])
        for transform in (lambda s: 3 * s + 2, np.exp, lambda s: s ** 3):
            moved = transform(np.asarray(scores))
            out = neg_acc(Predictions(records=[record("n0", "a", boxes, moved)]),
                          [neg], [scene])
            assert out == base


class TestAgainstReference:
    def _random_case(self, rng, image_id):
        n_inst = int(rng.integers(1, 4))
        inst_boxes = []
        for _ in range(n_inst):
            x1, y1 = rng.integers(0, 55, 2)
            w, h = rng.integers(17, 40, 2)
            inst_boxes.append((int(x1), int(y1), int(x1 + w), int(y1 + h)))
        scene = scene_with(image_id, inst_boxes)
        n_prop = int(rng.integers(1, 7))
        prop_boxes = []
        for _ in range(n_prop):
            x1, y1 = rng.integers(0, 60, 2)
            w, h = rng.integers(10, 40, 2)
            prop_boxes.append((int(x1), int(y1), int(x1 + w), int(y1 + h)))
        scores = rng.normal(size=n_prop).tolist()
        return scene, prop_boxes, scores

    def test_randomized_micro_scenes(self):
        rng = np.random.default_rng(42)
        for trial in range(100):
            scenes, expressions, records = [], [], []
            pos_cases, neg_cases = [], []
            for s in range(int(rng.integers(1, 4))):
                image_id = f"img{trial}-{s}"
                scene, prop_boxes, scores = self._random_case(rng, image_id)
                if not scene.instances:
                    continue
                scenes.append(scene)
                norm = 1.0 / IMG
                targets = [i.instance_id for i in scene.instances][: int(rng.integers(1, len(scene.instances) + 1))]
                expr = positive_expr(f"e{image_id}", image_id, targets)
                expressions.append(expr)
                records.append(record(expr.expression_id, image_id, prop_boxes, scores))
                target_corners = [
                    (i.x1 * norm, i.y1 * norm, i.x2 * norm, i.y2 * norm)
                    for i in scene.instances if i.instance_id in targets]
                pos_cases.append({
                    "proposals": [(b[0] * norm, b[1] * norm, b[2] * norm, b[3] * norm)
                                  for b in prop_boxes],
                    "scores": list(scores),
                    "targets": target_corners,
                })
                neg = negative_expr(f"n{image_id}", image_id,
                                    kind=("replace_category", "swap_size",
                                          "swap_position")[s % 3])
                expressions.append(neg)
                records.append(record(neg.expression_id, image_id, prop_boxes, scores))
                neg_cases.append({
                    "proposals": pos_cases[-1]["proposals"],
                    "scores": list(scores),
                    "scene_boxes": [(i.x1 * norm, i.y1 * norm, i.x2 * norm, i.y2 * norm)
                                    for i in scene.instances],
                })
            if not scenes:
                continue
            preds = Predictions(records=records)
            for k in (1, 5):
                assert topk(preds, expressions, scenes, k) == pytest.approx(
                    ref.ref_topk(pos_cases, k), abs=1e-9)
            assert recall_at_05(preds, expressions, scenes) == pytest.approx(
                ref.ref_recall_at_05(pos_cases), abs=1e-9)
            assert mean_iou(preds, expressions, scenes) == pytest.approx(
                ref.ref_mean_iou(pos_cases), abs=1e-9)
            for strict in (False, True):
                assert neg_acc(preds, expressions, scenes, strict) == pytest.approx(
                    ref.ref_neg_acc(neg_cases, strict), abs=1e-9)


class TestStratify:
    def _dataset(self):
        scenes = [
            scene_with("a", [(10, 10, 40, 40)]),                      # 1 instance
            scene_with("b", [(i * 9, 10, i * 9 + 8, 45) for i in range(11)],
                       categories=["weed"] * 11),                      # 11 instances
        ]
        expressions = [
            positive_expr("e0", "a", [0], size=scenes[0].instances[0].size_bin,
                          cell=scenes[0].instances[0].grid_cell),
            positive_expr("e1", "b", [0], size=scenes[1].instances[0].size_bin,
                          cat="weed", cell=scenes[1].instances[0].grid_cell),
            negative_expr("n0", "a", kind="replace_category"),
            negative_expr("n1", "b", kind="swap_size"),
        ]
        records = [
            record("e0", "a", [(10, 10, 40, 40)], [1.0]),
            record("e1", "b", [(0, 10, 7, 30)], [1.0]),
            record("n0", "a", [(70, 70, 90, 90)], [1.0]),
            record("n1", "b", [(40, 60, 60, 80)], [1.0]),
        ]
        return scenes, expressions, Predictions(records=records)

    def test_supports_sum_to_overall(self):
        scenes, expressions, preds = self._dataset()
        report = stratify(preds, scenes, expressions)
        assert sum(r.support for r in report.by_scale.values()) == report.overall.support
        assert sum(r.support for r in report.by_density.values()) == report.overall.support
        kinds = [report.neg_acc_by_kind[k].neg_support for k in
                 ("replace_category", "swap_size", "swap_position")]
        assert sum(kinds) == report.overall.neg_support

    def test_weighted_average_recomputes(self):
        scenes, expressions, preds = self._dataset()
        report = stratify(preds, scenes, expressions)
        total = 0.0
        support = 0
        for kind in ("replace_category", "swap_size", "swap_position"):
            row = report.neg_acc_by_kind[kind]
            if row.neg_acc is not None:
                total += row.neg_acc * row.neg_support
                support += row.neg_support
        avg = report.neg_acc_by_kind["weighted_average"]
        assert avg.neg_acc == pytest.approx(total / support, abs=1e-9)

    def test_density_bucket_boundaries(self):
        def bucket(n):
            boxes = [(i % 10 * 9, i // 10 * 9, i % 10 * 9 + 8, i // 10 * 9 + 8)
                     for i in range(n)]
            scene = SceneAnnotation(image_id="x", width=1000, height=1000, instances=[
                InstanceAnnotation(instance_id=k, category="maize",
                                   x1=b[0] * 10, y1=b[1] * 10,
                                   x2=b[2] * 10, y2=b[3] * 10)
                for k, b in enumerate(boxes)])
            scene = filter_instances(scene)
            assert len(scene.instances) == n
            expr = positive_expr("e", "x", [0],
                                 size=scene.instances[0].size_bin,
                                 cell=scene.instances[0].grid_cell)
            preds = Predictions(records=[record("e", "x", [(0, 0, 80, 80)], [1.0])])
            report = stratify(preds, [scene], [expr])
            return [label for label, row in report.by_density.items() if row.support][0]

        assert bucket(10) == "1-10"
        assert bucket(11) == "11-20"
        assert bucket(30) == "21-30"
        assert bucket(31) == ">30"

    def test_single_stratum_equals_overall(self):
        scenes = [scene_with("a", [(10, 10, 40, 40)])]
        inst = scenes[0].instances[0]
        expressions = [positive_expr("e0", "a", [0], size=inst.size_bin,
                                     cell=inst.grid_cell)]
        preds = Predictions(records=[record("e0", "a", [(10, 10, 40, 40)], [1.0])])
        report = stratify(preds, scenes, expressions)
        stratum = report.by_scale[f"{inst.size_bin}/crop"]
        assert stratum.top1 == report.overall.top1
        assert stratum.miou == report.overall.miou

    def test_top1_implies_miou_at_least_50(self):
        scenes, expressions, preds = self._dataset()
        for expr in expressions:
            if expr.polarity != "positive":
                continue
            t1 = topk(preds, [expr], scenes, 1)
            if t1 == 100.0:
                assert mean_iou(preds, [expr], scenes) >= 50.0

    def test_table_contains_strata_headings(self):
        scenes, expressions, preds = self._dataset()
        table = format_table(stratify(preds, scenes, expressions))
        for heading in ("Top-1", "Top-5", "R@0.5", "mIoU", "Neg-Acc",
                        "Tiny", "Small", "Medium", "Large", "Crop", "Weed",
                        "1-10 Instances", "11-20 Instances", "21-30 Instances",
                        ">30 Instances", "Replace Category", "Swap Size",
                        "Swap Position", "Weighted Average"):
            assert heading in table, heading
