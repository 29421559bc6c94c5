"""Checkpoint writers/readers for adapters, backbones, and head calibration.

Each artifact kind has its own magic tag but shares the container encoding.
Saving is deterministic, and save -> load -> save reproduces the file byte
for byte.
"""
from __future__ import annotations

import os

import numpy as np

from . import container as ct
from .adapter import GaraAdapter, SingleSpaceAdapter, HIGHER, LOWER
from .baselines import LoraAdapter, MoeLoraAdapter
from .errors import CheckpointError
from .rng import SeededRng
from .toy import HeadCalibration, ToyBackbone


def _require(path) -> None:
    if not os.path.exists(path):
        raise CheckpointError(f"missing checkpoint: {path}")


def _load_shaped(f, target: np.ndarray, what: str) -> None:
    arr = ct.read_array(f)
    if arr.size != target.size:
        raise CheckpointError(f"{what}: expected {target.size} values, got {arr.size}")
    target[...] = arr.reshape(target.shape)


# ---------------------------------------------------------------------------
# gated-rank adapter


def save_gara(path, adapter: GaraAdapter) -> None:
    with open(path, "wb") as f:
        f.write(ct.MAGIC_GARA)
        ct.write_u32(f, ct.FORMAT_VERSION)
        ct.write_u32(f, adapter.out_dim)
        ct.write_u32(f, adapter.in_dim)
        ct.write_u32(f, adapter.lower.max_rank)
        ct.write_u32(f, adapter.higher.max_rank)
        ct.write_f64(f, adapter.tau)
        ct.write_array(f, adapter.lower.down.value)
        ct.write_array(f, adapter.lower.up.value)
        ct.write_array(f, adapter.higher.down.value)
        ct.write_array(f, adapter.higher.up.value)
        ct.write_array(f, adapter.gates.space_mlp.flatten())
        ct.write_array(f, adapter.gates.lower_mlp.flatten())
        ct.write_array(f, adapter.gates.higher_mlp.flatten())


def load_gara(path) -> GaraAdapter:
    _require(path)
    with open(path, "rb") as f:
        ct.expect_magic(f, ct.MAGIC_GARA)
        ct.read_version(f)
        out_dim = ct.read_u32(f)
        in_dim = ct.read_u32(f)
        r_lower = ct.read_u32(f)
        r_higher = ct.read_u32(f)
        tau = ct.read_f64(f)
        adapter = GaraAdapter.build(out_dim, in_dim, r_lower, r_higher, tau, SeededRng(0))
        _load_shaped(f, adapter.lower.down.value, "lower.down")
        _load_shaped(f, adapter.lower.up.value, "lower.up")
        _load_shaped(f, adapter.higher.down.value, "higher.down")
        _load_shaped(f, adapter.higher.up.value, "higher.up")
        for mlp in (adapter.gates.space_mlp, adapter.gates.lower_mlp, adapter.gates.higher_mlp):
            flat = ct.read_array(f)
            mlp.load_flat(flat)
        ct.expect_eof(f)
    return adapter


# ---------------------------------------------------------------------------
# single-space ablation adapter


def save_single(path, adapter: SingleSpaceAdapter) -> None:
    with open(path, "wb") as f:
        f.write(ct.MAGIC_SINGLE)
        ct.write_u32(f, ct.FORMAT_VERSION)
        ct.write_u32(f, adapter.out_dim)
        ct.write_u32(f, adapter.in_dim)
        ct.write_u32(f, adapter.space.max_rank)
        ct.write_u32(f, 1 if adapter.label == HIGHER else 0)
        ct.write_f64(f, adapter.tau)
        ct.write_array(f, adapter.space.down.value)
        ct.write_array(f, adapter.space.up.value)
        ct.write_array(f, adapter.mlp.flatten())


def load_single(path) -> SingleSpaceAdapter:
    _require(path)
    with open(path, "rb") as f:
        ct.expect_magic(f, ct.MAGIC_SINGLE)
        ct.read_version(f)
        out_dim = ct.read_u32(f)
        in_dim = ct.read_u32(f)
        rank = ct.read_u32(f)
        label = HIGHER if ct.read_u32(f) == 1 else LOWER
        tau = ct.read_f64(f)
        adapter = SingleSpaceAdapter.build(out_dim, in_dim, rank, tau, SeededRng(0), label=label)
        _load_shaped(f, adapter.space.down.value, "space.down")
        _load_shaped(f, adapter.space.up.value, "space.up")
        adapter.mlp.load_flat(ct.read_array(f))
        ct.expect_eof(f)
    return adapter


# ---------------------------------------------------------------------------
# lora


def save_lora(path, adapter: LoraAdapter) -> None:
    with open(path, "wb") as f:
        f.write(ct.MAGIC_LORA)
        ct.write_u32(f, ct.FORMAT_VERSION)
        ct.write_u32(f, adapter.out_dim)
        ct.write_u32(f, adapter.in_dim)
        ct.write_u32(f, adapter.rank)
        ct.write_array(f, adapter.down.value)
        ct.write_array(f, adapter.up.value)


def load_lora(path) -> LoraAdapter:
    _require(path)
    with open(path, "rb") as f:
        ct.expect_magic(f, ct.MAGIC_LORA)
        ct.read_version(f)
        out_dim = ct.read_u32(f)
        in_dim = ct.read_u32(f)
        rank = ct.read_u32(f)
        adapter = LoraAdapter.build(out_dim, in_dim, rank, SeededRng(0))
        _load_shaped(f, adapter.down.value, "down")
        _load_shaped(f, adapter.up.value, "up")
        ct.expect_eof(f)
    return adapter


# ---------------------------------------------------------------------------
# mixture of experts


def save_moe(path, adapter: MoeLoraAdapter) -> None:
    with open(path, "wb") as f:
        f.write(ct.MAGIC_MOE)
        ct.write_u32(f, ct.FORMAT_VERSION)
        ct.write_u32(f, adapter.out_dim)
        ct.write_u32(f, adapter.in_dim)
        ct.write_u32(f, len(adapter.experts))
        for rank in adapter.ranks:
            ct.write_u32(f, rank)
        ct.write_f64(f, adapter.tau)
        for expert in adapter.experts:
            ct.write_array(f, expert.down.value)
            ct.write_array(f, expert.up.value)
        ct.write_array(f, adapter.router.flatten())


def load_moe(path) -> MoeLoraAdapter:
    _require(path)
    with open(path, "rb") as f:
        ct.expect_magic(f, ct.MAGIC_MOE)
        ct.read_version(f)
        out_dim = ct.read_u32(f)
        in_dim = ct.read_u32(f)
        n_experts = ct.read_u32(f)
        ranks = [ct.read_u32(f) for _ in range(n_experts)]
        tau = ct.read_f64(f)
        adapter = MoeLoraAdapter.build(out_dim, in_dim, ranks, tau, SeededRng(0))
        for i, expert in enumerate(adapter.experts):
            _load_shaped(f, expert.down.value, f"expert{i}.down")
            _load_shaped(f, expert.up.value, f"expert{i}.up")
        adapter.router.load_flat(ct.read_array(f))
        ct.expect_eof(f)
    return adapter


# ---------------------------------------------------------------------------
# backbone and calibration


def save_backbone(path, backbone: ToyBackbone) -> None:
    with open(path, "wb") as f:
        f.write(ct.MAGIC_BACKBONE)
        ct.write_u32(f, ct.FORMAT_VERSION)
        ct.write_u32(f, backbone.image_size)
        ct.write_u32(f, backbone.patch_size)
        ct.write_u32(f, backbone.ff_hidden)
        ct.write_u32(f, backbone.n_blocks)
        for blk in backbone.blocks:
            for p in blk.parameters():
                ct.write_array(f, p.value)
        ct.write_array(f, backbone.head_w.value)
        ct.write_array(f, backbone.head_b.value)


def load_backbone(path, frozen: bool = True) -> ToyBackbone:
    _require(path)
    with open(path, "rb") as f:
        ct.expect_magic(f, ct.MAGIC_BACKBONE)
        ct.read_version(f)
        image_size = ct.read_u32(f)
        patch_size = ct.read_u32(f)
        ff_hidden = ct.read_u32(f)
        n_blocks = ct.read_u32(f)
        backbone = ToyBackbone(image_size, patch_size, ff_hidden, n_blocks, SeededRng(0))
        for bi, blk in enumerate(backbone.blocks):
            for p in blk.parameters():
                _load_shaped(f, p.value, f"block{bi}.{p.name}")
        _load_shaped(f, backbone.head_w.value, "head.w")
        _load_shaped(f, backbone.head_b.value, "head.b")
        ct.expect_eof(f)
    backbone.frozen = frozen
    return backbone


def save_calibration(path, calibration: HeadCalibration) -> None:
    with open(path, "wb") as f:
        f.write(ct.MAGIC_CALIBRATION)
        ct.write_u32(f, ct.FORMAT_VERSION)
        ct.write_array(f, calibration.gain.value)
        ct.write_array(f, calibration.bias.value)


def load_calibration(path) -> HeadCalibration:
    _require(path)
    calibration = HeadCalibration.build()
    with open(path, "rb") as f:
        ct.expect_magic(f, ct.MAGIC_CALIBRATION)
        ct.read_version(f)
        _load_shaped(f, calibration.gain.value, "gain")
        _load_shaped(f, calibration.bias.value, "bias")
        ct.expect_eof(f)
    return calibration


# ---------------------------------------------------------------------------
# kind dispatch


_ADAPTER_LOADERS = {
    ct.MAGIC_GARA: load_gara,
    ct.MAGIC_SINGLE: load_single,
    ct.MAGIC_LORA: load_lora,
    ct.MAGIC_MOE: load_moe,
}

_ADAPTER_SAVERS = [
    (GaraAdapter, save_gara),
    (SingleSpaceAdapter, save_single),
    (LoraAdapter, save_lora),
    (MoeLoraAdapter, save_moe),
]


def load_adapter(path):
    """Load any adapter kind, dispatching on the magic tag."""
    _require(path)
    magic = ct.peek_magic(path)
    loader = _ADAPTER_LOADERS.get(magic)
    if loader is None:
        raise CheckpointError(f"{path}: magic {magic!r} is not an adapter checkpoint")
    return loader(path)


def save_adapter(path, adapter) -> None:
    for cls, saver in _ADAPTER_SAVERS:
        if isinstance(adapter, cls):
            saver(path, adapter)
            return
    raise CheckpointError(f"cannot checkpoint adapter of type {type(adapter).__name__}")
