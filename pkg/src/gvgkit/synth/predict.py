"""Inference: score every expression of a split and emit ranked,
refined proposals plus the per-image existence class."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gvgkit import hrs
from gvgkit.hrs import AblationFlags, HrsParams, Level0Vocabulary
from gvgkit.synth.boxhead import BoxRefiner
from gvgkit.synth.config import SynthConfig, TrainConfig
from gvgkit.synth.encode import EmbeddingTable, encode_proposals, encode_text
from gvgkit.synth.scenes import SplitData

PREDICTIONS_FORMAT = "gvgkit-predictions"
PREDICTIONS_VERSION = 1


@dataclass
class PredictionRecord:
    expression_id: str
    image_id: str
    level0_class: int
    boxes_px: np.ndarray        # (N, 4) corners, score-descending
    scores: np.ndarray          # (N,)


@dataclass
class Predictions:
    records: list[PredictionRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def by_expression(self) -> dict[str, PredictionRecord]:
        return {r.expression_id: r for r in self.records}


def predict_split(split: SplitData, cfg: SynthConfig, tcfg: TrainConfig,
                  params: HrsParams, refiner: BoxRefiner,
                  vocab: Level0Vocabulary | None = None,
                  gate_level0: bool = True) -> Predictions:
    """Rank all proposals for every expression; boxes pass through the
    frozen refinement head. The level-0 argmax is computed once per
    image over the fixed vocabulary.

    With ``gate_level0`` the final score enforces the hierarchy at
    inference: the referent counts as present only when some proposal
    clears the calibrated existence bar (best referring score above
    zero, i.e. more likely target than not under the trained
    calibration). When none does, the referent is judged absent and
    proposals are re-ranked by the scene's backgroundness scores (their
    relevance to the no-vegetation sentence), so the prediction points
    at soil instead of at some other instance. ``gate_level0=False``
    ranks by the raw referring score.
    """
    vocab = vocab or Level0Vocabulary()
    table = EmbeddingTable(cfg.seed)
    vocab_texts = [encode_text(s, table, cfg.max_tokens) for s in vocab.sentences]
    ablation = tcfg.ablation
    background_class = vocab.class_by_image_type["empty"]

    records: list[PredictionRecord] = []
    for scene in split.scenes:
        proposals, _ = encode_proposals(scene, cfg, table)
        logits, _ = hrs.level0_distribution(proposals, vocab_texts, params, ablation)
        level0_class = int(np.argmax(logits.value))
        raw = np.array([[b.cx, b.cy, b.w, b.h] for b in proposals.boxes])
        refined = refiner.refine_numpy(raw)
        cx, cy, w, h = refined[:, 0], refined[:, 1], refined[:, 2], refined[:, 3]
        corners = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)
        corners_px = corners * np.array([scene.width, scene.height,
                                         scene.width, scene.height])
        background_scores = None
        if gate_level0:
            bg_out = hrs.score_expression(proposals, vocab_texts[background_class],
                                          params, ablation)
            background_scores = bg_out.referring_scores.value
        for expr in split.expressions_for(scene.image_id):
            text = encode_text(expr.text, table, cfg.max_tokens)
            out = hrs.score_expression(proposals, text, params, ablation)
            scores = out.referring_scores.value
            if gate_level0 and expr.level == "instance":
                referent_present = float(np.max(scores)) >= 0.0
                if not referent_present:
                    scores = background_scores
            order = np.argsort(-scores, kind="stable")
            records.append(PredictionRecord(
                expression_id=expr.expression_id,
                image_id=scene.image_id,
                level0_class=level0_class,
                boxes_px=corners_px[order],
                scores=scores[order],
            ))
    return Predictions(records=records,
                       meta={"split": split.name, "vocab": list(vocab.sentences),
                             "gate_level0": gate_level0})


def write_predictions(preds: Predictions, path: str | Path, seed: int) -> None:
    header = {"record": "header", "format": PREDICTIONS_FORMAT,
              "version": PREDICTIONS_VERSION, "seed": seed}
    header.update(preds.meta)
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    for rec in preds.records:
        lines.append(json.dumps({
            "record": "prediction",
            "expression_id": rec.expression_id,
            "image_id": rec.image_id,
            "level0_class": rec.level0_class,
            "proposals": [
                {"bbox_xyxy_px": [float(v) for v in box], "score": float(score)}
                for box, score in zip(rec.boxes_px, rec.scores)
            ],
        }, sort_keys=True, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + "\n")


def read_predictions(path: str | Path) -> Predictions:
    records = []
    meta = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if lineno == 1:
                if record.get("format") != PREDICTIONS_FORMAT:
                    raise ValueError(f"not a predictions file: {path}")
                if record.get("version") != PREDICTIONS_VERSION:
                    raise ValueError(
                        f"unsupported predictions version {record.get('version')}")
                meta = {k: v for k, v in record.items() if k != "record"}
                continue
            boxes = np.array([p["bbox_xyxy_px"] for p in record["proposals"]],
                             dtype=np.float64).reshape(-1, 4)
            scores = np.array([p["score"] for p in record["proposals"]],
                              dtype=np.float64)
            records.append(PredictionRecord(
                expression_id=record["expression_id"],
                image_id=record["image_id"],
                level0_class=record["level0_class"],
                boxes_px=boxes, scores=scores))
    return Predictions(records=records, meta=meta)
