"""Optimization loop: frozen backbone, trainable adapters and gates.

Robustification trains solely on corrupted images with BCE + Dice loss,
equally weighted, using Adam with decoupled weight decay.  Everything is
deterministic given (config, seed): batches, gate noise, and parameter
updates all derive from named SeededRng splits.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Parameter
from .bench import BenchSample, dice as dice_metric, iou as iou_metric
from .errors import ConfigError, DivergenceError, UsageError
from .rng import SeededRng
from .toy import SegmentationModel, patchify, unpatchify


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 8
    tau: float = 0.5
    steps: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")


class Adam:
    """Adam with decoupled weight decay; moments keyed by parameter name."""

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self, params: list[Parameter], learning_rate: float,
                 weight_decay: float = 0.0):
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise UsageError(f"duplicate parameter names: {dupes}")
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.value) for p in params}
        self.v = {p.name: np.zeros_like(p.value) for p in params}

    def step(self, grads: dict) -> None:
        """One update; parameters missing from the gradient map get zero gradient."""
        self.step_count += 1
        t = self.step_count
        for p in self.params:
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.value)
            if g.shape != p.value.shape:
                raise UsageError(f"gradient shape {g.shape} != {p.value.shape} for {p.name}")
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.BETA1
            m += (1.0 - self.BETA1) * g
            v *= self.BETA2
            v += (1.0 - self.BETA2) * g * g
            m_hat = m / (1.0 - self.BETA1 ** t)
            v_hat = v / (1.0 - self.BETA2 ** t)
            p.value -= self.learning_rate * (
                m_hat / (np.sqrt(v_hat) + self.EPS) + self.weight_decay * p.value
            )


def sample_loss(model: SegmentationModel, sample: BenchSample,
                rng: SeededRng | None, train: bool):
    """BCE + Dice on the corrupted image against the token-layout mask."""
    logits, decisions = model.forward_image(sample.corrupted, rng=rng, train=train)
    target = patchify(np.asarray(sample.mask, dtype=np.float64), model.backbone.patch_size)
    loss = ag.add(ag.bce_loss(logits, target), ag.dice_loss(logits, target))
    return loss, decisions


def train_step(model: SegmentationModel, batch: list, config: TrainConfig,
               optimizer: Adam, rng: SeededRng, step_index: int):
    """One optimizer step over a batch of corrupted samples.

    Returns (loss value, list of slot decisions across the batch).
    """
    if not batch:
        raise UsageError("train_step got an empty batch")
    losses = []
    decisions = []
    for i, sample in enumerate(batch):
        srng = rng.split("step", step_index, "sample", i)
        loss, decs = sample_loss(model, sample, srng, train=True)
        losses.append(loss)
        decisions.extend(decs)
    total = losses[0]
    for extra in losses[1:]:
        total = ag.add(total, extra)
    total = ag.scalar_mul(1.0 / len(losses), total)
    loss_value = float(total.value)
    if not np.isfinite(loss_value):
        raise DivergenceError(step_index, loss_value, config.learning_rate)
    optimizer.step(ag.backward(total))
    return loss_value, decisions


def _gate_stats(decisions: list) -> dict:
    """Mean effective ranks per pool and the fraction routed to the higher pool."""
    lower_ranks = []
    higher_ranks = []
    higher_flags = []
    for slot_dec in decisions:
        dec = slot_dec.decision
        lower = getattr(dec, "lower_bits", None)
        higher = getattr(dec, "higher_bits", None)
        if lower is None and higher is None:
            continue
        if lower is not None:
            lower_ranks.append(int(lower.sum()))
        if higher is not None:
            higher_ranks.append(int(higher.sum()))
        higher_flags.append(1.0 if dec.use_higher else 0.0)
    return {
        "mean_rank_lower": float(np.mean(lower_ranks)) if lower_ranks else 0.0,
        "mean_rank_higher": float(np.mean(higher_ranks)) if higher_ranks else 0.0,
        "fraction_higher": float(np.mean(higher_flags)) if higher_flags else 0.0,
    }


def fit(model: SegmentationModel, train_samples: list, config: TrainConfig,
        log_path=None) -> list[dict]:
    """Full robustification run; returns the per-step log records."""
    if not train_samples:
        raise UsageError("fit needs a nonempty training set")
    if len(train_samples) < config.batch_size:
        raise UsageError(
            f"training set of {len(train_samples)} smaller than batch size {config.batch_size}"
        )
    optimizer = Adam(model.trainable_parameters(), config.learning_rate, config.weight_decay)
    root = SeededRng(config.seed)
    batch_rng = root.split("batches")
    step_rng = root.split("gates")
    n = len(train_samples)
    history: list[dict] = []
    for step in range(config.steps):
        idx = batch_rng.split(step).choice(n, size=config.batch_size, replace=False)
        batch = [train_samples[int(i)] for i in idx]
        loss_value, decisions = train_step(model, batch, config, optimizer, step_rng, step)
        record = {"step": step, "loss": loss_value}
        record.update(_gate_stats(decisions))
        history.append(record)
    if log_path is not None:
        write_train_log(log_path, history)
    return history


LOG_FIELDS = ("step", "loss", "mean_rank_lower", "mean_rank_higher", "fraction_higher")


def write_train_log(path, history: list[dict]) -> None:
    """Append-free rewrite of the line-delimited training log."""
    with open(path, "w", encoding="utf-8") as f:
        for record in history:
            # pinned field order keeps logs byte-stable; records without
            # gate stats (backbone pretraining) just write fewer fields
            ordered = {k: record[k] for k in LOG_FIELDS if k in record}
            f.write(json.dumps(ordered) + "\n")


def read_train_log(path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


@dataclass
class EvalRow:
    """Per-sample evaluation record."""

    image_id: int
    corruption: str
    severity: int
    iou: float
    dice: float
    decisions: list = field(default_factory=list)


def evaluate(model: SegmentationModel, samples: list, on_clean: bool = False) -> list[EvalRow]:
    """Score every sample in eval mode; consumes no RNG, mutates nothing."""
    if not samples:
        raise UsageError("evaluate needs a nonempty dataset")
    rows = []
    for sample in samples:
        image = sample.clean if on_clean else sample.corrupted
        logits, decisions = model.forward_image(image, train=False)
        grid = ag.value_of(logits)
        mask_pred = unpatchify(grid, model.backbone.image_size, model.backbone.patch_size) > 0.0
        rows.append(
            EvalRow(
                image_id=sample.image_id,
                corruption=sample.spec.kind,
                severity=sample.spec.severity,
                iou=iou_metric(mask_pred, sample.mask),
                dice=dice_metric(mask_pred, sample.mask),
                decisions=decisions,
            )
        )
    return rows
