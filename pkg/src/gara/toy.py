"""Desk-scale segmentation backbone with adapter injection points.

Images are cut into flat patch tokens; two token-mixing blocks (sigmoid
attention over q/k/v projections plus a small feedforward, both residual)
feed a per-token linear head that predicts the logits of each pixel in the
patch.  The q/k/v projections are the adapter slots.  After pretraining the
backbone is frozen: its weights enter the graph as plain arrays, so they can
never receive gradient.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import adapter as ad
from . import autograd as ag
from . import baselines as bl
from .autograd import Parameter
from .errors import ConfigError, ShapeError, UsageError
from .rng import SeededRng

PROJECTION_TAGS = ("q", "k", "v")


def patchify(image, patch_size: int) -> np.ndarray:
    """(S, S) image -> (T, patch_size^2) row-major patch tokens."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ShapeError(f"expected a square 2-d image, got shape {image.shape}")
    size = image.shape[0]
    if size % patch_size != 0:
        raise ShapeError(f"image size {size} not divisible by patch size {patch_size}")
    grid = size // patch_size
    blocks = image.reshape(grid, patch_size, grid, patch_size)
    return blocks.transpose(0, 2, 1, 3).reshape(grid * grid, patch_size * patch_size)


def unpatchify(tokens, image_size: int, patch_size: int) -> np.ndarray:
    """Inverse of patchify."""
    tokens = np.asarray(tokens, dtype=np.float64)
    grid = image_size // patch_size
    if tokens.shape != (grid * grid, patch_size * patch_size):
        raise ShapeError(
            f"tokens shape {tokens.shape} does not match grid {grid}x{grid} of {patch_size}px patches"
        )
    blocks = tokens.reshape(grid, grid, patch_size, patch_size)
    return blocks.transpose(0, 2, 1, 3).reshape(image_size, image_size)


@dataclass
class BlockParams:
    wq: Parameter
    wk: Parameter
    wv: Parameter
    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter

    def parameters(self) -> list[Parameter]:
        return [self.wq, self.wk, self.wv, self.w1, self.b1, self.w2, self.b2]


class ToyBackbone:
    """Frozen-after-pretraining token mixer; dim = patch_size**2."""

    def __init__(self, image_size: int, patch_size: int, ff_hidden: int, n_blocks: int,
                 rng: SeededRng):
        if image_size % patch_size != 0:
            raise ConfigError(f"image size {image_size} not divisible by patch {patch_size}")
        if n_blocks < 1 or ff_hidden < 1:
            raise ConfigError(f"bad backbone dims: blocks={n_blocks}, ff_hidden={ff_hidden}")
        self.image_size = image_size
        self.patch_size = patch_size
        self.dim = patch_size * patch_size
        self.ff_hidden = ff_hidden
        self.frozen = False
        k = self.dim
        scale = 1.0 / np.sqrt(k)
        self.blocks: list[BlockParams] = []
        for i in range(n_blocks):
            brng = rng.split("block", i)
            self.blocks.append(
                BlockParams(
                    wq=Parameter(brng.split("wq").normal(size=(k, k), scale=scale), f"block{i}.wq"),
                    wk=Parameter(brng.split("wk").normal(size=(k, k), scale=scale), f"block{i}.wk"),
                    wv=Parameter(brng.split("wv").normal(size=(k, k), scale=scale), f"block{i}.wv"),
                    w1=Parameter(brng.split("w1").normal(size=(ff_hidden, k), scale=scale), f"block{i}.w1"),
                    b1=Parameter(np.zeros(ff_hidden), f"block{i}.b1"),
                    w2=Parameter(brng.split("w2").normal(size=(k, ff_hidden), scale=1.0 / np.sqrt(ff_hidden)), f"block{i}.w2"),
                    b2=Parameter(np.zeros(k), f"block{i}.b2"),
                )
            )
        self.head_w = Parameter(rng.split("head_w").normal(size=(self.dim, k), scale=scale), "head.w")
        self.head_b = Parameter(np.zeros(self.dim), "head.b")

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def token_count(self) -> int:
        grid = self.image_size // self.patch_size
        return grid * grid

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for blk in self.blocks:
            out.extend(blk.parameters())
        out.extend([self.head_w, self.head_b])
        return out


@dataclass
class AdapterSlot:
    """One adapter attachment point: (block index, projection tag)."""

    layer: int
    tag: str
    adapter: object  # GaraAdapter | SingleSpaceAdapter | LoraAdapter | MoeLoraAdapter

    def key(self) -> tuple:
        return (self.layer, self.tag)


@dataclass
class SlotDecision:
    """Gate telemetry for one slot on one forward pass."""

    layer: int
    tag: str
    decision: object  # GateDecision or ExpertChoice


@dataclass
class HeadCalibration:
    """Scalar gain/bias on the head logits; the only non-adapter trainables."""

    gain: Parameter
    bias: Parameter

    @classmethod
    def build(cls, name: str = "calibration") -> "HeadCalibration":
        return cls(Parameter(np.ones(()), f"{name}.gain"), Parameter(np.zeros(()), f"{name}.bias"))

    def parameters(self) -> list[Parameter]:
        return [self.gain, self.bias]


def _slot_delta(slot_adapter, tokens, rng: SeededRng | None, train: bool):
    if isinstance(slot_adapter, (ad.GaraAdapter, ad.SingleSpaceAdapter)):
        return ad.delta_tokens(slot_adapter, tokens, rng, train)
    if isinstance(slot_adapter, bl.LoraAdapter):
        return bl.lora_delta_tokens(slot_adapter, tokens, train), None
    if isinstance(slot_adapter, bl.MoeLoraAdapter):
        return bl.moe_delta_tokens(slot_adapter, tokens, rng, train)
    raise UsageError(f"unsupported adapter type {type(slot_adapter).__name__}")


def forward_segment(backbone: ToyBackbone, slots: list[AdapterSlot], image,
                    rng: SeededRng | None = None, train: bool = False,
                    calibration: HeadCalibration | None = None):
    """Run one image through the adapted backbone.

    Returns (per-token pixel logits of shape (T, patch^2), slot decisions).
    """
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (backbone.image_size, backbone.image_size):
        raise ShapeError(
            f"image shape {image.shape} != ({backbone.image_size}, {backbone.image_size})"
        )
    tokens = patchify(image, backbone.patch_size)
    logits, decisions = forward_tokens(backbone, slots, tokens, rng=rng, train=train,
                                       calibration=calibration)
    return logits, decisions


def forward_tokens(backbone: ToyBackbone, slots: list[AdapterSlot], tokens,
                   rng: SeededRng | None = None, train: bool = False,
                   calibration: HeadCalibration | None = None):
    by_key = {}
    for slot in slots:
        if slot.key() in by_key:
            raise UsageError(f"duplicate adapter slot {slot.key()}")
        by_key[slot.key()] = slot
    backbone_trains = train and not backbone.frozen

    def p(param: Parameter):
        return param if backbone_trains else param.value

    k = backbone.dim
    t_count = ag.value_of(tokens).shape[0]
    x = tokens
    decisions: list[SlotDecision] = []
    for li, blk in enumerate(backbone.blocks):
        projs = {}
        for tag, w in (("q", blk.wq), ("k", blk.wk), ("v", blk.wv)):
            proj = ag.matmul(x, ag.transpose(p(w)))
            slot = by_key.get((li, tag))
            if slot is not None and slot.adapter is not None:
                slot_rng = rng.split("slot", li, tag) if rng is not None else None
                delta, dec = _slot_delta(slot.adapter, x, slot_rng, train)
                proj = ag.add(proj, delta)
                if dec is not None:
                    decisions.append(SlotDecision(li, tag, dec))
            projs[tag] = proj
        scores = ag.scalar_mul(1.0 / np.sqrt(k), ag.matmul(projs["q"], ag.transpose(projs["k"])))
        mix = ag.scalar_mul(1.0 / t_count, ag.matmul(ag.sigmoid(scores), projs["v"]))
        x = ag.add(x, mix)
        hidden = ag.relu(ag.add_rowvec(ag.matmul(x, ag.transpose(p(blk.w1))), p(blk.b1)))
        ff = ag.add_rowvec(ag.matmul(hidden, ag.transpose(p(blk.w2))), p(blk.b2))
        x = ag.add(x, ff)
    logits = ag.add_rowvec(ag.matmul(x, ag.transpose(p(backbone.head_w))), p(backbone.head_b))
    if calibration is not None:
        gain = calibration.gain if train else calibration.gain.value
        bias = calibration.bias if train else calibration.bias.value
        logits = ag.sadd(bias, ag.smul(gain, logits))
    return logits, decisions


class SegmentationModel:
    """Backbone + adapter slots + head calibration, evaluated per image."""

    def __init__(self, backbone: ToyBackbone, slots: list[AdapterSlot] | None = None,
                 calibration: HeadCalibration | None = None, label: str = "backbone"):
        self.backbone = backbone
        self.slots = slots or []
        self.calibration = calibration
        self.label = label

    def forward_image(self, image, rng: SeededRng | None = None, train: bool = False):
        return forward_segment(self.backbone, self.slots, image, rng=rng, train=train,
                               calibration=self.calibration)

    def predict_logits(self, image) -> np.ndarray:
        logits, _ = self.forward_image(image, train=False)
        return ag.value_of(logits)

    def predict_mask(self, image) -> np.ndarray:
        """Binary mask at the pixel grid; decision boundary is logit > 0."""
        logits = self.predict_logits(image)
        grid = unpatchify(logits, self.backbone.image_size, self.backbone.patch_size)
        return grid > 0.0

    def trainable_parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        if not self.backbone.frozen:
            params.extend(self.backbone.parameters())
        for slot in self.slots:
            if slot.adapter is not None:
                params.extend(slot.adapter.parameters())
        if self.calibration is not None:
            params.extend(self.calibration.parameters())
        return params


def pretrain_backbone(clean_train: list, clean_eval: list, steps: int, rng: SeededRng,
                      image_size: int = 32, patch_size: int = 8, ff_hidden: int = 64,
                      n_blocks: int = 2, learning_rate: float = 3e-3, batch_size: int = 8,
                      iou_threshold: float = 0.90):
    """Train a fresh backbone on clean (image, mask) pairs, then freeze it.

    Returns (backbone, report).  steps=0 returns the frozen random
    initialization with a warning; a nonzero run that misses the IoU bar
    raises TrainingDiagnosticError carrying the loss curve.
    """
    # imported here: the trainer module is generic over models and must not
    # depend on this one
    from .trainer import Adam
    from .bench import iou as iou_metric
    from .errors import DivergenceError, TrainingDiagnosticError

    if not clean_train:
        raise UsageError("pretraining needs a nonempty clean dataset")
    backbone = ToyBackbone(image_size, patch_size, ff_hidden, n_blocks, rng.split("init"))
    model = SegmentationModel(backbone)
    history: list[float] = []
    if steps > 0:
        opt = Adam(backbone.parameters(), learning_rate=learning_rate)
        data_rng = rng.split("batches")
        n = len(clean_train)
        for step in range(steps):
            take = min(batch_size, n)
            idx = data_rng.split(step).choice(n, size=take, replace=False)
            losses = []
            for i in idx:
                image, mask = clean_train[int(i)]
                logits, _ = model.forward_image(image, train=True)
                target = patchify(np.asarray(mask, dtype=np.float64), patch_size)
                losses.append(ag.add(ag.bce_loss(logits, target), ag.dice_loss(logits, target)))
            total = losses[0]
            for extra in losses[1:]:
                total = ag.add(total, extra)
            total = ag.scalar_mul(1.0 / len(losses), total)
            loss_value = float(total.value)
            if not np.isfinite(loss_value):
                raise DivergenceError(step, loss_value, learning_rate)
            history.append(loss_value)
            opt.step(ag.backward(total))
    backbone.frozen = True
    scores = [iou_metric(model.predict_mask(img), mask) for img, mask in clean_eval]
    clean_iou = float(np.mean(scores)) if scores else float("nan")
    report = {"steps": steps, "clean_iou": clean_iou, "loss_history": history}
    if steps == 0:
        warnings.warn(f"backbone returned untrained (clean IoU {clean_iou:.3f})", stacklevel=2)
        return backbone, report
    if clean_iou < iou_threshold:
        raise TrainingDiagnosticError(
            f"pretraining reached clean IoU {clean_iou:.3f} < required {iou_threshold:.2f}",
            history,
        )
    return backbone, report
