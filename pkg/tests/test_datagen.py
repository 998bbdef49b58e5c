import numpy as np
import pytest

from gvgkit.datagen import (
    CATEGORIES,
    GRID_CELLS,
    SIZE_BINS,
    Attributes,
    Expression,
    InstanceAnnotation,
    ParseError,
    SceneAnnotation,
    filter_instances,
    gen_image_negatives,
    gen_instance_expression,
    gen_positive_expressions,
    gen_test_negatives,
    grid_cell,
    instance_template,
    read_dataset,
    size_bin,
    stratified_split,
    write_dataset,
)
from gvgkit.geometry import BBox


def make_scene(image_id="img0", w=1000, h=1000, specs=()):
    """specs: (category, x1, y1, x2, y2) tuples in pixels."""
    raw = SceneAnnotation(image_id=image_id, width=w, height=h, instances=[
        InstanceAnnotation(instance_id=k, category=cat, x1=x1, y1=y1, x2=x2, y2=y2)
        for k, (cat, x1, y1, x2, y2) in enumerate(specs)
    ])
    return filter_instances(raw)


class TestFiltering:
    def test_area_rule(self):
        scene = make_scene(specs=[
            ("maize", 0, 0, 15, 20),    # 300 px^2: kept
            ("maize", 50, 50, 60, 60),  # 100 px^2: removed
        ])
        assert [i.instance_id for i in scene.instances] == [0]

    def test_all_removed_becomes_empty(self):
        scene = make_scene(specs=[("weed", 0, 0, 10, 10)])
        assert scene.instances == []
        assert scene.image_type == "empty"

    def test_image_type_classification(self):
        crop = make_scene(specs=[("maize", 0, 0, 100, 100)])
        weed = make_scene(specs=[("weed", 0, 0, 100, 100)])
        mixed = make_scene(specs=[("maize", 0, 0, 100, 100),
                                  ("weed", 200, 200, 300, 300)])
        assert crop.image_type == "crop_only"
        assert weed.image_type == "weed_only"
        assert mixed.image_type == "mixed"


class TestAttributes:
    def test_grid_cells(self):
        assert grid_cell(BBox(0.1, 0.2, 0.05, 0.05)) == "top left"
        assert grid_cell(BBox(0.5, 0.5, 0.05, 0.05)) == "centre"
        # boundary value stays in the lower cell
        assert grid_cell(BBox(1 / 3, 0.5, 0.05, 0.05)) == "middle left"
        assert grid_cell(BBox(0.9, 0.9, 0.05, 0.05)) == "bottom right"
        assert len(GRID_CELLS) == 9 and "centre" in GRID_CELLS

    def test_size_bins(self):
        w = h = 1445
        tiny = BBox.from_corners(0, 0, 16 / w, 16 / h)
        assert size_bin(tiny, w, h) == "tiny"
        large = BBox.from_corners(0, 0, 1402 / w, 1402 / h)
        assert size_bin(large, w, h) == "large"
        # r exactly on a boundary bins upward
        boundary = BBox(0.5, 0.5, 0.12, 0.12)
        assert size_bin(boundary, 1000, 1000) == "medium"

    def test_derived_attributes_on_instances(self):
        scene = make_scene(specs=[("pea", 0, 0, 40, 40)])
        inst = scene.instances[0]
        assert inst.size_bin == "tiny"
        assert inst.grid_cell == "top left"


class TestExpressions:
    def test_template_text(self):
        scene = make_scene(specs=[("maize", 100, 100, 180, 180)])
        expr = gen_instance_expression(scene.instances[0], scene)
        assert expr.text == "the small maize at the top left of the image"
        assert expr.target_ids == [0]

    def test_template_wording_matches_attributes(self):
        assert instance_template("small", "maize", "top left") == \
            "the small maize at the top left of the image"

    def test_identical_attribute_instances_share_one_expression(self):
        scene = make_scene(specs=[
            ("weed", 100, 100, 180, 180),
            ("weed", 120, 130, 200, 210),
            ("maize", 700, 700, 780, 780),
        ])
        exprs = gen_positive_expressions(scene)
        assert len(exprs) == 2
        weed_expr = next(e for e in exprs if e.attributes.category == "weed")
        assert sorted(weed_expr.target_ids) == [0, 1]

    def test_expression_count_bounded_by_instances(self):
        rng = np.random.default_rng(0)
        specs = []
        for _ in range(12):
            x1, y1 = rng.integers(0, 900, 2)
            side = rng.integers(20, 90)
            specs.append((CATEGORIES[rng.integers(len(CATEGORIES))],
                          x1, y1, x1 + side, y1 + side))
        scene = make_scene(specs=specs)
        exprs = gen_positive_expressions(scene)
        assert len(exprs) <= len(scene.instances)
        for e in exprs:
            matching = scene.instances_matching(
                e.attributes.category, e.attributes.size_bin, e.attributes.grid_cell)
            assert sorted(e.target_ids) == sorted(matching)

    def test_targets_invariant_on_positive(self):
        with pytest.raises(ValueError):
            Expression(expression_id="x", image_id="img0", text="t",
                       level="instance", polarity="positive", negative_kind="none",
                       attributes=Attributes("maize"), target_ids=[])


class TestImageNegatives:
    def test_type_mapping(self):
        crop = make_scene(specs=[("maize", 0, 0, 100, 100)])
        negs = gen_image_negatives(crop)
        assert len(negs) == 1
        assert negs[0].text == "there is no weed in the image"
        assert negs[0].level == "image"
        assert negs[0].target_ids == []

        weed = make_scene(specs=[("weed", 0, 0, 100, 100)])
        assert gen_image_negatives(weed)[0].text == "there is no crop in the image"

        empty = make_scene(specs=[])
        assert gen_image_negatives(empty)[0].text == "there is no vegetation in the image"

        mixed = make_scene(specs=[("maize", 0, 0, 100, 100),
                                  ("weed", 200, 200, 300, 300)])
        assert gen_image_negatives(mixed) == []


class TestNegatives:
    def _scenes(self, n=12, seed=0):
        rng = np.random.default_rng(seed)
        scenes = []
        for k in range(n):
            specs = []
            for _ in range(int(rng.integers(1, 6))):
                x1, y1 = rng.integers(0, 800, 2)
                side = int(rng.integers(25, 200))
                cat = CATEGORIES[rng.integers(len(CATEGORIES))]
                specs.append((cat, int(x1), int(y1), int(x1) + side, int(y1) + side))
            scenes.append(make_scene(image_id=f"img{k}", specs=specs))
        return scenes

    def test_negatives_never_match_instances(self):
        scenes = self._scenes()
        by_id = {s.image_id: s for s in scenes}
        negatives, meta = gen_test_negatives(scenes, seed=1)
        assert negatives, "expected some negatives"
        for neg in negatives:
            scene = by_id[neg.image_id]
            matching = scene.instances_matching(
                neg.attributes.category, neg.attributes.size_bin, neg.attributes.grid_cell)
            assert matching == []
            assert neg.target_ids == []
            assert neg.negative_kind in ("replace_category", "swap_size", "swap_position")

    def test_replacement_on_single_category_scene(self):
        scene = make_scene(specs=[("maize", 100, 100, 180, 180)])
        negatives, _ = gen_test_negatives([scene], seed=2, fraction_per_kind=1.0)
        replace = [n for n in negatives if n.negative_kind == "replace_category"]
        assert replace and all(n.attributes.category != "maize" for n in replace)

    def test_counts_near_one_third(self):
        scenes = self._scenes(n=30, seed=3)
        negatives, meta = gen_test_negatives(scenes, seed=4)
        for kind, actual in meta["per_kind_actual"].items():
            assert actual + meta["shortfall"][kind] == meta["per_kind_target"]

    def test_deterministic(self):
        scenes = self._scenes(n=10, seed=5)
        a, _ = gen_test_negatives(scenes, seed=6)
        b, _ = gen_test_negatives(scenes, seed=6)
        assert [(x.expression_id, x.text) for x in a] == [(x.expression_id, x.text) for x in b]


class TestSplit:
    def _uniform_scenes(self, n, image_type="crop_only"):
        cat = {"crop_only": "maize", "weed_only": "weed"}.get(image_type, "maize")
        scenes = []
        for k in range(n):
            if image_type == "empty":
                scenes.append(make_scene(image_id=f"s{k}", specs=[]))
            else:
                scenes.append(make_scene(image_id=f"s{k}",
                                         specs=[(cat, 0, 0, 100, 100)]))
        return scenes

    def test_exact_ratio(self):
        train, val, test = stratified_split(self._uniform_scenes(100), seed=0)
        assert (len(train), len(val), len(test)) == (70, 15, 15)

    def test_largest_remainder(self):
        train, val, test = stratified_split(self._uniform_scenes(10), seed=0)
        assert (len(train), len(val), len(test)) == (7, 2, 1)

    def test_partition_property(self):
        rng = np.random.default_rng(1)
        scenes = []
        for k in range(40):
            t = ["crop_only", "weed_only", "mixed", "empty"][int(rng.integers(4))]
            if t == "empty":
                scenes.append(make_scene(image_id=f"p{k}", specs=[]))
            elif t == "mixed":
                scenes.append(make_scene(image_id=f"p{k}", specs=[
                    ("maize", 0, 0, 100, 100), ("weed", 200, 200, 300, 300)]))
            elif t == "weed_only":
                scenes.append(make_scene(image_id=f"p{k}", specs=[("weed", 0, 0, 100, 100)]))
            else:
                scenes.append(make_scene(image_id=f"p{k}", specs=[("maize", 0, 0, 100, 100)]))
        train, val, test = stratified_split(scenes, seed=2)
        ids = sorted(s.image_id for s in train + val + test)
        assert ids == sorted(s.image_id for s in scenes)
        assert not (set(s.image_id for s in train) & set(s.image_id for s in val))
        assert not (set(s.image_id for s in train) & set(s.image_id for s in test))
        assert not (set(s.image_id for s in val) & set(s.image_id for s in test))

    def test_ratio_validation(self):
        with pytest.raises(ValueError):
            stratified_split([], ratios=(0.5, 0.2, 0.2))


class TestSerialization:
    def _dataset(self):
        scenes = [make_scene(image_id="a", specs=[("maize", 10, 10, 90, 90)]),
                  make_scene(image_id="b", specs=[("weed", 10, 10, 90, 90)])]
        exprs = []
        for s in scenes:
            exprs.extend(gen_positive_expressions(s))
            exprs.extend(gen_image_negatives(s))
        return scenes, exprs

    def test_roundtrip_exact(self, tmp_path):
        scenes, exprs = self._dataset()
        path = tmp_path / "data.jsonl"
        write_dataset(scenes, exprs, path, meta={"seed": 0, "split": "train"})
        scenes2, exprs2, meta = read_dataset(path)
        assert meta["seed"] == 0
        assert [s.__dict__ for s in scenes2] == [
            {**s.__dict__, "instances": s.instances} for s in scenes]
        assert len(exprs2) == len(exprs)
        for e1, e2 in zip(exprs, exprs2):
            assert e1.__dict__ == e2.__dict__
        # byte identity when written twice
        path2 = tmp_path / "data2.jsonl"
        write_dataset(scenes2, exprs2, path2, meta={"seed": 0, "split": "train"})
        assert path.read_bytes() == path2.read_bytes()

    def test_unknown_category_rejected(self, tmp_path):
        scenes, exprs = self._dataset()
        path = tmp_path / "data.jsonl"
        write_dataset(scenes, exprs, path)
        lines = path.read_text().splitlines()
        bad = lines[1].replace("maize", "kudzu")
        path.write_text("\n".join([lines[0], bad] + lines[2:]) + "\n")
        with pytest.raises(ParseError) as err:
            read_dataset(path)
        assert err.value.line == 2

    def test_version_mismatch_rejected(self, tmp_path):
        scenes, exprs = self._dataset()
        path = tmp_path / "data.jsonl"
        write_dataset(scenes, exprs, path)
        lines = path.read_text().splitlines()
        lines[0] = lines[0].replace('"version":1', '"version":2')
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError, match="version"):
            read_dataset(path)
