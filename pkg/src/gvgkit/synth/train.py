"""Two-stage training: box refinement first, relevance scoring second.

Stage 1 fits the box refinement head under the interpolated-IoU loss
with distance/size-aware matching; stage 2 freezes it and trains the
scoring head under the hierarchical objective. Batches of four cover
the four image types whenever the split provides them. Every random
choice derives from the run seed, so a rerun reproduces the training
bit for bit.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from gvgkit import gradkit as gk
from gvgkit import hrs
from gvgkit.datagen import Expression, SceneAnnotation
from gvgkit.hrs import AblationFlags, HrsParams, Level0Vocabulary
from gvgkit.matching import MatchConfig, assign_optimal, build_cost_matrix
from gvgkit.synth.boxhead import BoxRefiner, giou_loss_diff, interp_iou_loss_diff
from gvgkit.synth.config import SynthConfig, TrainConfig
from gvgkit.synth.encode import EmbeddingTable, encode_proposals, encode_text
from gvgkit.synth.scenes import SplitData


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint: dict | None = None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class EncodedScene:
    scene: SceneAnnotation
    proposals: hrs.ProposalFeatures
    source_ids: np.ndarray
    expressions: list[Expression]


@dataclass
class LogRow:
    epoch: int
    stage: int
    loss_total: float
    loss_lvl0: float
    loss_lvl1c: float
    loss_interp_iou: float
    lr: float


@dataclass
class TrainResult:
    params: HrsParams
    refiner: BoxRefiner
    log: list[LogRow] = field(default_factory=list)
    refiner_checksum: str = ""


def encode_split(split: SplitData, cfg: SynthConfig,
                 table: EmbeddingTable) -> list[EncodedScene]:
    out = []
    for scene in split.scenes:
        proposals, source_ids = encode_proposals(scene, cfg, table)
        out.append(EncodedScene(scene=scene, proposals=proposals,
                                source_ids=source_ids,
                                expressions=split.expressions_for(scene.image_id)))
    return out


def vocabulary_texts(vocab: Level0Vocabulary, table: EmbeddingTable,
                     max_tokens: int = 64) -> list[hrs.TextFeatures]:
    return [encode_text(sentence, table, max_tokens) for sentence in vocab.sentences]


def _epoch_rng(seed: int, stage: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, stage, epoch])


def _batches(encoded: list[EncodedScene], batch_size: int,
             rng: np.random.Generator) -> list[list[EncodedScene]]:
    """Shuffle within each image type, then deal one scene per type per
    batch so every batch covers the available types."""
    by_type: dict[str, list[EncodedScene]] = {}
    for item in encoded:
        by_type.setdefault(item.scene.image_type, []).append(item)
    queues = []
    for image_type in sorted(by_type):
        group = by_type[image_type]
        order = rng.permutation(len(group))
        queues.append([group[i] for i in order])
    interleaved: list[EncodedScene] = []
    while any(queues):
        for queue in queues:
            if queue:
                interleaved.append(queue.pop())
    return [interleaved[i:i + batch_size]
            for i in range(0, len(interleaved), batch_size)]


def _stage1_scene_loss(item: EncodedScene, refiner: BoxRefiner,
                       tcfg: TrainConfig, match_cfg: MatchConfig):
    gts = [inst.normalized_box(item.scene.width, item.scene.height)
           for inst in item.scene.instances]
    if not gts:
        return None
    cost = build_cost_matrix(item.proposals.boxes, gts, match_cfg)
    assignment = assign_optimal(cost, canonical=False)
    if not assignment.pairs:
        return None
    rows = [i for i, _ in assignment.pairs]
    cols = [j for _, j in assignment.pairs]
    prop = np.array([[b.cx, b.cy, b.w, b.h]
                     for b in (item.proposals.boxes[i] for i in rows)])
    gt = np.array([[g.cx, g.cy, g.w, g.h] for g in (gts[j] for j in cols)])
    refined = refiner.refine(prop)
    if tcfg.ablation.no_interp_iou:
        return giou_loss_diff(refined, gt)
    return interp_iou_loss_diff(refined, gt, alpha=tcfg.interp_alpha)


def train_stage1(encoded: list[EncodedScene], tcfg: TrainConfig) -> tuple[BoxRefiner, list[LogRow]]:
    refiner = BoxRefiner(seed=tcfg.seed)
    opt = gk.Adam([t for _, t in refiner.params()], lr=tcfg.lr_init)
    match_cfg = MatchConfig(lambda_centre=tcfg.lambda_centre,
                            lambda_size=tcfg.lambda_size)
    log: list[LogRow] = []
    last_good = refiner.state_dict()
    for epoch in range(tcfg.stage1_epochs):
        lr = gk.cosine_lr(tcfg.lr_init, epoch, tcfg.stage1_epochs)
        rng = _epoch_rng(tcfg.seed, 1, epoch)
        epoch_losses = []
        try:
            for batch in _batches(encoded, tcfg.batch_size, rng):
                losses = []
                for item in batch:
                    loss = _stage1_scene_loss(item, refiner, tcfg, match_cfg)
                    if loss is not None:
                        losses.append(loss)
                if not losses:
                    continue
                total = gk.mul(losses[0], 1.0 / len(losses))
                for extra in losses[1:]:
                    total = gk.add(total, gk.mul(extra, 1.0 / len(losses)))
                opt.zero_grad()
                gk.backward(total)
                opt.step(lr=lr)
                epoch_losses.append(float(total.value))
        except (OverflowError, ValueError) as err:
            refiner.load_state_dict(last_good)
            raise TrainingDiverged(f"stage 1 diverged in epoch {epoch}: {err}",
                                   checkpoint=last_good) from err
        mean_loss = float(np.mean(epoch_losses)) if epoch_losses else 0.0
        log.append(LogRow(epoch=epoch, stage=1, loss_total=mean_loss,
                          loss_lvl0=0.0, loss_lvl1c=0.0,
                          loss_interp_iou=mean_loss, lr=lr))
        last_good = refiner.state_dict()
    return refiner, log


ABSENCE_SAMPLE_RATE = 0.45  # image-level absence sentence share per batch slot


def _pick_expressions(item: EncodedScene, count: int,
                      rng: np.random.Generator) -> list[Expression]:
    """Sample trainable expressions for this scene: positives and the
    image-level absence sentence, with the absence sentence drawn at a
    fixed rate so dense scenes still rehearse non-existence."""
    pool = [e for e in item.expressions
            if e.negative_kind == "none"]  # test-split manipulations never train
    if not pool:
        return []
    absence = [e for e in pool if e.level == "image"]
    positives = [e for e in pool if e.level == "instance"]
    picked = []
    for _ in range(count):
        if absence and positives:
            if rng.random() < ABSENCE_SAMPLE_RATE:
                picked.append(absence[int(rng.integers(len(absence)))])
            else:
                picked.append(positives[int(rng.integers(len(positives)))])
        else:
            picked.append(pool[int(rng.integers(len(pool)))])
    return picked


def _scene_losses(item: EncodedScene, params: HrsParams, vocab: Level0Vocabulary,
                  vocab_texts, table: EmbeddingTable, tcfg: TrainConfig,
                  rng: np.random.Generator):
    """Per-scene objective: existence cross-entropy plus the constrained
    instance loss averaged over the sampled expressions. The existence
    floor applies per expression, then the type weights combine the two
    levels."""
    logits, _ = hrs.level0_distribution(item.proposals, vocab_texts, params,
                                        tcfg.ablation)
    l0 = hrs.loss_lvl0(logits, vocab.true_class(item.scene.image_type))
    exprs = _pick_expressions(item, tcfg.expressions_per_scene, rng)
    if not exprs:
        l1c = gk.constant(0.0)
    else:
        pieces = []
        for expr in exprs:
            text = encode_text(expr.text, table)
            out = hrs.score_expression(item.proposals, text, params, tcfg.ablation)
            targets = np.isin(item.source_ids,
                              np.asarray(expr.target_ids, dtype=np.int64))
            l1 = hrs.loss_lvl1(out.referring_scores, targets.astype(float))
            pieces.append(l1 if tcfg.ablation.no_constraint
                          else hrs.loss_constrained(l1, l0))
        l1c = gk.mul(pieces[0], 1.0 / len(pieces))
        for extra in pieces[1:]:
            l1c = gk.add(l1c, gk.mul(extra, 1.0 / len(pieces)))
    hmce = hrs.loss_hmce(l0, l1c, hrs.coarse_image_type(item.scene.image_type))
    return hmce, float(l0.value), float(l1c.value)


def train_stage2(encoded: list[EncodedScene], params: HrsParams,
                 vocab: Level0Vocabulary, table: EmbeddingTable,
                 tcfg: TrainConfig) -> list[LogRow]:
    vocab_texts = vocabulary_texts(vocab, table)
    opt = gk.Adam(params.trainable(tcfg.ablation), lr=tcfg.lr_init)
    log: list[LogRow] = []
    last_good = {name: t.value.copy() for name, t in params.leaves()}
    for epoch in range(tcfg.stage2_epochs):
        lr = gk.cosine_lr(tcfg.lr_init, epoch, tcfg.stage2_epochs)
        rng = _epoch_rng(tcfg.seed, 2, epoch)
        totals, l0s, l1cs = [], [], []
        try:
            for batch in _batches(encoded, tcfg.batch_size, rng):
                pieces = []
                for item in batch:
                    hmce, l0_val, l1c_val = _scene_losses(
                        item, params, vocab, vocab_texts, table, tcfg, rng)
                    pieces.append(hrs.loss_total(hmce, 0.0))
                    l0s.append(l0_val)
                    l1cs.append(l1c_val)
                total = gk.mul(pieces[0], 1.0 / len(pieces))
                for extra in pieces[1:]:
                    total = gk.add(total, gk.mul(extra, 1.0 / len(pieces)))
                opt.zero_grad()
                gk.backward(total)
                opt.step(lr=lr)
                totals.append(float(total.value))
        except (OverflowError, ValueError) as err:
            for name, t in params.leaves():
                t.value = last_good[name]
            raise TrainingDiverged(f"stage 2 diverged in epoch {epoch}: {err}",
                                   checkpoint=last_good) from err
        log.append(LogRow(epoch=epoch, stage=2,
                          loss_total=float(np.mean(totals)) if totals else 0.0,
                          loss_lvl0=float(np.mean(l0s)) if l0s else 0.0,
                          loss_lvl1c=float(np.mean(l1cs)) if l1cs else 0.0,
                          loss_interp_iou=0.0, lr=lr))
        last_good = {name: t.value.copy() for name, t in params.leaves()}
    return log


def train_two_stage(train_split: SplitData, cfg: SynthConfig, tcfg: TrainConfig,
                    vocab: Level0Vocabulary | None = None) -> TrainResult:
    """Full schedule. Missing image types in the training split are
    tolerated with a warning from the batching side (batches simply
    cover fewer types)."""
    import warnings

    vocab = vocab or Level0Vocabulary()
    table = EmbeddingTable(cfg.seed)
    encoded = encode_split(train_split, cfg, table)
    present = {item.scene.image_type for item in encoded}
    missing = set(vocab.class_by_image_type) - present
    if missing:
        warnings.warn(f"training split lacks image types: {sorted(missing)}")

    refiner, log1 = train_stage1(encoded, tcfg)
    checksum_before = refiner.checksum()

    params = HrsParams(d_v=cfg.d_v, d_t=cfg.d_t, d=tcfg.d, heads=tcfg.heads,
                       d_ff=tcfg.d_ff, d_hidden=tcfg.d_hidden, seed=tcfg.seed)
    log2 = train_stage2(encoded, params, vocab, table, tcfg)

    if refiner.checksum() != checksum_before:
        raise RuntimeError("stage 2 modified frozen stage-1 parameters")
    return TrainResult(params=params, refiner=refiner, log=log1 + log2,
                       refiner_checksum=checksum_before)


def write_log(log: list[LogRow], path, seed: int) -> None:
    lines = [f"# seed={seed}",
             "epoch,stage,loss_total,loss_lvl0,loss_lvl1c,loss_interp_iou,lr"]
    for row in log:
        lines.append(f"{row.epoch},{row.stage},{row.loss_total:.8f},"
                     f"{row.loss_lvl0:.8f},{row.loss_lvl1c:.8f},"
                     f"{row.loss_interp_iou:.8f},{row.lr:.8e}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def params_checksum(params: HrsParams) -> str:
    digest = hashlib.sha256()
    for name, t in params.leaves():
        digest.update(name.encode())
        digest.update(t.value.tobytes())
    return digest.hexdigest()
