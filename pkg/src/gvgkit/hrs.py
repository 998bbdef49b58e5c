"""Hierarchical relevance scoring for generalised grounding.

Scoring runs at two levels. Level 0 decides the global semantic state of
an image by classifying over a small fixed vocabulary of image-level
sentences (each scored by max-pooling per-proposal scores). Level 1
ranks candidate regions for a given expression by fusing sentence-level
and word-level similarities with a learned balance weight.

All forward passes run on gradkit tensors so the training losses get
exact reverse-mode gradients; prediction code just reads ``.value``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gvgkit import gradkit as gk
from gvgkit.geometry import BBox
from gvgkit.gradkit import Tensor

PARAMS_FORMAT = "gvgkit-params"
PARAMS_VERSION = 1

# (lambda_level0, lambda_level1) per coarse image type
HMCE_WEIGHTS = {
    "mixed": (1.0, 2.5),
    "single": (1.0, 2.0),
    "empty": (1.0, 0.0),
}


class EmptyTextError(ValueError):
    pass


@dataclass
class TextFeatures:
    """Raw token embeddings with a validity mask.

    ``sentence_feature`` is derived: the per-channel maximum over valid
    tokens, the pooling the scoring head mirrors in its shared space.
    """

    token_embeddings: np.ndarray
    valid_mask: np.ndarray
    sentence_feature: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.token_embeddings = np.asarray(self.token_embeddings, dtype=np.float64)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        if self.token_embeddings.ndim != 2:
            raise ValueError("token embeddings must be (tokens, dim)")
        if self.valid_mask.shape != (self.token_embeddings.shape[0],):
            raise ValueError("valid mask must have one flag per token")
        if not self.valid_mask.any():
            raise EmptyTextError("expression has no valid tokens")
        self.sentence_feature = self.token_embeddings[self.valid_mask].max(axis=0)


@dataclass
class ProposalFeatures:
    """Candidate regions: one feature row and one box per proposal."""

    features: np.ndarray
    boxes: list[BBox]

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError("proposal features must be a non-empty (N, d) matrix")
        if len(self.boxes) != self.features.shape[0]:
            raise ValueError("feature rows and boxes must align")


@dataclass
class RelevanceOutput:
    """Per-proposal relevance pieces for one expression."""

    sentence_scores: Tensor      # (N,)   cosine-to-sentence / temperature
    word_scores: Tensor          # (N, T) cosine-to-token / temperature
    sentence_weight: Tensor      # ()     balance in (0, 1)
    referring_scores: Tensor     # (N,)   fused ranking scores


@dataclass(frozen=True)
class Level0Vocabulary:
    """Fixed image-level sentences, one per global image state.

    Mixed scenes carry no true negation sentence, so they map to the
    dedicated [EMPTY] entry.
    """

    sentences: tuple[str, ...] = (
        "there is no crop in the image",
        "there is no weed in the image",
        "there is no vegetation in the image",
        "[EMPTY]",
    )
    class_by_image_type: dict = field(default_factory=lambda: {
        "crop_only": 1,   # crops present, weeds absent
        "weed_only": 0,
        "empty": 2,
        "mixed": 3,
    })

    def __post_init__(self) -> None:
        if len(self.sentences) < 2:
            raise ValueError("vocabulary needs at least two sentences")
        if sum(1 for s in self.sentences if s == "[EMPTY]") != 1:
            raise ValueError("vocabulary must contain exactly one [EMPTY] entry")
        for image_type, idx in self.class_by_image_type.items():
            if not 0 <= idx < len(self.sentences):
                raise ValueError(f"class index {idx} for {image_type} out of range")

    @property
    def empty_index(self) -> int:
        return self.sentences.index("[EMPTY]")

    def true_class(self, image_type: str) -> int:
        if image_type not in self.class_by_image_type:
            raise ValueError(f"unknown image type {image_type!r}")
        return self.class_by_image_type[image_type]


@dataclass(frozen=True)
class AblationFlags:
    sentence_only: bool = False
    word_only: bool = False
    no_projection: bool = False
    no_constraint: bool = False
    no_interp_iou: bool = False

    def __post_init__(self) -> None:
        if self.sentence_only and self.word_only:
            raise ValueError("sentence_only and word_only are mutually exclusive")


class HrsParams:
    """All learnable state of the scoring head."""

    def __init__(self, d_v: int, d_t: int, d: int = 64, heads: int = 4,
                 d_ff: int = 128, d_hidden: int = 32, seed: int = 0,
                 temperature_init: float = 0.07):
        if d % heads != 0:
            raise ValueError(f"model dim {d} not divisible by {heads} heads")
        if temperature_init <= 0:
            raise ValueError("temperature must be positive")
        self.d_v, self.d_t, self.d = d_v, d_t, d
        self.heads, self.d_ff, self.d_hidden = heads, d_ff, d_hidden
        rng = np.random.default_rng(seed)

        def linear(fan_in, *shape):
            bound = 1.0 / np.sqrt(fan_in)
            return gk.tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

        self.visual_proj = linear(d_v, d_v, d)
        self.text_proj = linear(d_t, d_t, d)
        self.attn_q = linear(d, d, d)
        self.attn_k = linear(d, d, d)
        self.attn_v = linear(d, d, d)
        self.attn_out = linear(d, d, d)
        self.ffn_w1 = linear(d, d, d_ff)
        self.ffn_b1 = linear(d, d_ff)
        self.ffn_w2 = linear(d_ff, d_ff, d)
        self.ffn_b2 = linear(d_ff, d)
        self.fusion_w1 = linear(d, d, d_hidden)
        self.fusion_b1 = linear(d, d_hidden)
        self.fusion_w2 = linear(d_hidden, d_hidden, 1)
        self.fusion_b2 = linear(d_hidden, 1)
        # stored on log scale so the temperature stays positive
        self.log_temperature = gk.tensor(np.log(temperature_init), requires_grad=True)

    _TENSOR_NAMES = (
        "visual_proj", "text_proj", "attn_q", "attn_k", "attn_v", "attn_out",
        "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2",
        "fusion_w1", "fusion_b1", "fusion_w2", "fusion_b2", "log_temperature",
    )

    def leaves(self) -> list[tuple[str, Tensor]]:
        return [(name, getattr(self, name)) for name in self._TENSOR_NAMES]

    def trainable(self, ablation: AblationFlags = AblationFlags()) -> list[Tensor]:
        """Tensors the optimizer may update; the no-projection ablation
        freezes both projections at their random initialisation."""
        skip = {"visual_proj", "text_proj"} if ablation.no_projection else set()
        return [t for name, t in self.leaves() if name not in skip]

    @property
    def temperature(self) -> float:
        return float(np.exp(self.log_temperature.value))

    def save(self, path: str | Path, seed: int | None = None) -> None:
        payload = {
            "format": PARAMS_FORMAT,
            "version": PARAMS_VERSION,
            "seed": seed,
            "dims": {"d_v": self.d_v, "d_t": self.d_t, "d": self.d,
                     "heads": self.heads, "d_ff": self.d_ff, "d_hidden": self.d_hidden},
            "tensors": {
                name: {"shape": list(t.value.shape), "data": t.value.reshape(-1).tolist()}
                for name, t in self.leaves()
            },
        }
        Path(path).write_text(json.dumps(payload))

    @classmethod
    def load(cls, path: str | Path) -> "HrsParams":
        payload = json.loads(Path(path).read_text())
        if payload.get("format") != PARAMS_FORMAT:
            raise ValueError(f"not a parameter checkpoint: {path}")
        if payload.get("version") != PARAMS_VERSION:
            raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
        dims = payload["dims"]
        params = cls(d_v=dims["d_v"], d_t=dims["d_t"], d=dims["d"], heads=dims["heads"],
                     d_ff=dims["d_ff"], d_hidden=dims["d_hidden"])
        for name, t in params.leaves():
            spec = payload["tensors"][name]
            t.value = np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
        return params


def fuse(proposals: ProposalFeatures, text: TextFeatures, params: HrsParams) -> Tensor:
    """Project both modalities into the shared space and let proposal
    queries attend to text tokens; residual plus feed-forward on top.

    Invalid tokens receive a large negative attention bias, so their
    values cannot reach the fused features.
    """
    if not text.valid_mask.any():
        raise EmptyTextError("expression has no valid tokens")
    p = gk.matmul(gk.constant(proposals.features), params.visual_proj)       # (N, d)
    t = gk.matmul(gk.constant(text.token_embeddings), params.text_proj)     # (T, d)

    d, heads = params.d, params.heads
    dh = d // heads
    scale = 1.0 / np.sqrt(dh)
    q_all = gk.matmul(p, params.attn_q)
    k_all = gk.matmul(t, params.attn_k)
    v_all = gk.matmul(t, params.attn_v)
    bias = np.where(text.valid_mask, 0.0, -1e9)[None, :]                    # (1, T)

    head_outputs = []
    for h in range(heads):
        q = gk.narrow(q_all, 1, h * dh, dh)
        k = gk.narrow(k_all, 1, h * dh, dh)
        v = gk.narrow(v_all, 1, h * dh, dh)
        scores = gk.add(gk.mul(gk.matmul(q, gk.transpose(k)), scale), gk.constant(bias))
        attn = gk.softmax(scores, axis=-1)
        head_outputs.append(gk.matmul(attn, v))
    message = gk.matmul(gk.concat(head_outputs, axis=1), params.attn_out)

    fused = gk.add(p, message)
    hidden = gk.relu(gk.add(gk.matmul(fused, params.ffn_w1), params.ffn_b1))
    return gk.add(fused, gk.add(gk.matmul(hidden, params.ffn_w2), params.ffn_b2))


def referring_score(fused: Tensor, text: TextFeatures, params: HrsParams,
                    ablation: AblationFlags = AblationFlags()) -> RelevanceOutput:
    """Temperature-scaled sentence and word similarities, fused into one
    ranking score by a learned sentence weight.

    Word similarities are defined for valid tokens only; the word-score
    matrix keeps the full token width with zeros at invalid positions,
    which never enter the rowwise max.
    """
    t = gk.matmul(gk.constant(text.token_embeddings), params.text_proj)     # (T, d)
    sentence = gk.masked_max_pool(t, text.valid_mask, axis=0)               # (d,)
    tau = gk.exp(params.log_temperature)

    sentence_scores = gk.div(gk.cosine_similarity(fused, sentence), tau)    # (N,)
    valid_idx = np.flatnonzero(text.valid_mask)
    select = np.zeros((len(valid_idx), len(text.valid_mask)))
    select[np.arange(len(valid_idx)), valid_idx] = 1.0
    t_valid = gk.matmul(gk.constant(select), t)                             # (V, d)
    word_valid = gk.div(gk.cosine_matrix(fused, t_valid), tau)              # (N, V)
    word_max = gk.max_over_axis(word_valid, axis=1)                         # (N,)
    word_scores = gk.matmul(word_valid, gk.constant(select))                # (N, T)

    hidden = gk.relu(gk.add(gk.matmul(sentence, params.fusion_w1), params.fusion_b1))
    logit = gk.add(gk.matmul(hidden, params.fusion_w2), params.fusion_b2)
    weight = gk.sigmoid(gk.reduce_sum(logit))

    if ablation.sentence_only:
        weight = gk.constant(1.0)
    elif ablation.word_only:
        weight = gk.constant(0.0)
    referring = gk.add(gk.mul(weight, sentence_scores),
                       gk.mul(gk.sub(1.0, weight), word_max))
    return RelevanceOutput(sentence_scores=sentence_scores, word_scores=word_scores,
                           sentence_weight=weight, referring_scores=referring)


def score_expression(proposals: ProposalFeatures, text: TextFeatures, params: HrsParams,
                     ablation: AblationFlags = AblationFlags()) -> RelevanceOutput:
    """Fuse then score: the full per-expression forward pass."""
    return referring_score(fuse(proposals, text, params), text, params, ablation)


def level0_distribution(proposals: ProposalFeatures, vocab_texts: list[TextFeatures],
                        params: HrsParams,
                        ablation: AblationFlags = AblationFlags()) -> tuple[Tensor, Tensor]:
    """Image-level class logits: each vocabulary sentence is scored with
    its own fused pass and max-pooled over proposals; softmax over the
    vocabulary gives the class distribution."""
    if len(vocab_texts) < 2:
        raise ValueError("level-0 needs at least two vocabulary sentences")
    pooled = []
    for text in vocab_texts:
        out = score_expression(proposals, text, params, ablation)
        pooled.append(gk.max_over_axis(out.referring_scores, axis=0))
    logits = gk.stack(pooled)
    return logits, gk.softmax(logits)


def loss_lvl0(level0_logits: Tensor, true_class: int) -> Tensor:
    """Cross-entropy of the image-level class distribution."""
    return gk.cross_entropy(level0_logits, true_class)


def loss_lvl1(referring_scores: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy over proposals; an all-negative target
    vector is the normal case for absence expressions."""
    targets = np.asarray(targets, dtype=np.float64)
    return gk.bce_with_logits(referring_scores, targets)


def loss_constrained(l1: Tensor, l0: Tensor) -> Tensor:
    """Instance loss floored by the image-level loss: learning to rank
    instances cannot outpace learning whether they exist at all. The
    gradient flows only into the active branch."""
    return gk.maximum(l1, l0)


def loss_hmce(l0: Tensor, l1c: Tensor, image_type: str) -> Tensor:
    """Type-weighted sum of the two levels; empty images train existence
    only."""
    if image_type not in HMCE_WEIGHTS:
        raise ValueError(f"unknown image type {image_type!r}; "
                         f"expected one of {sorted(HMCE_WEIGHTS)}")
    lam0, lam1 = HMCE_WEIGHTS[image_type]
    weighted = gk.mul(l0, lam0)
    if lam1 == 0.0:
        return weighted
    return gk.add(weighted, gk.mul(l1c, lam1))


def loss_total(hmce: Tensor, interp_iou: Tensor | float) -> Tensor:
    """Final objective: semantic alignment plus box regression."""
    if isinstance(interp_iou, (int, float)) and float(interp_iou) == 0.0:
        return hmce
    return gk.add(hmce, interp_iou)


def coarse_image_type(image_type: str) -> str:
    """Collapse scene types to the loss-weight classes."""
    if image_type in ("crop_only", "weed_only"):
        return "single"
    if image_type in ("mixed", "empty"):
        return image_type
    raise ValueError(f"unknown image type {image_type!r}")
