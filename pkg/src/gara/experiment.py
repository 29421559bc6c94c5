"""End-to-end pipelines built from the library pieces.

These functions wire datasets, backbones, adapters, and the trainer together
for the CLI and for the sweep-style analyses; each run owns an independent
RNG stream derived from (seed, run identity) so sweeps parallelize without
changing results.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import analysis, bench, checkpoint
from .adapter import GaraAdapter, SingleSpaceAdapter, HIGHER, LOWER
from .baselines import LoraAdapter, MoeLoraAdapter
from .config import ExperimentConfig
from .errors import CheckpointError, ConfigError
from .rng import SeededRng
from .toy import (
    AdapterSlot,
    HeadCalibration,
    PROJECTION_TAGS,
    SegmentationModel,
    ToyBackbone,
    pretrain_backbone,
)
from .trainer import TrainConfig, evaluate, fit


# ---------------------------------------------------------------------------
# data


def make_clean_sets(cfg: ExperimentConfig):
    rng = SeededRng(cfg.bench_seed)
    train = bench.generate_clean_pairs(cfg.clean_train, rng.split("clean_train"), cfg.image_size)
    holdout = bench.generate_clean_pairs(cfg.clean_eval, rng.split("clean_eval"), cfg.image_size)
    return train, holdout


def make_bench_sets(cfg: ExperimentConfig):
    rng = SeededRng(cfg.bench_seed)
    train = bench.train_bench(rng, cfg.train_per_cell, holdout=cfg.holdout_kind,
                              severities=cfg.train_severities, size=cfg.image_size)
    test = bench.test_bench(rng, cfg.test_per_cell, severities=cfg.test_severities,
                            size=cfg.image_size)
    return train, test


# ---------------------------------------------------------------------------
# model assembly


def pretrain(cfg: ExperimentConfig):
    clean_train, clean_eval = make_clean_sets(cfg)
    rng = SeededRng(cfg.seed).split("pretrain")
    return pretrain_backbone(
        clean_train,
        clean_eval,
        steps=cfg.pretrain_steps,
        rng=rng,
        image_size=cfg.image_size,
        patch_size=cfg.patch_size,
        ff_hidden=cfg.ff_hidden,
        n_blocks=cfg.blocks,
        learning_rate=cfg.pretrain_lr,
        batch_size=cfg.pretrain_batch,
        iou_threshold=cfg.clean_iou_min,
    )


def build_slot_adapter(kind: str, cfg: ExperimentConfig, rng: SeededRng, name: str,
                       rank: int | None = None, tau: float | None = None):
    dim = cfg.dim
    tau = cfg.tau if tau is None else tau
    r_lower, r_higher = cfg.resolved_ranks()
    if kind == "gara":
        return GaraAdapter.build(dim, dim, r_lower, r_higher, tau, rng, name=name)
    if kind == "gara_lower":
        return SingleSpaceAdapter.build(dim, dim, r_lower, tau, rng, label=LOWER, name=name)
    if kind == "gara_higher":
        return SingleSpaceAdapter.build(dim, dim, r_higher, tau, rng, label=HIGHER, name=name)
    if kind == "lora":
        return LoraAdapter.build(dim, dim, rank if rank is not None else cfg.adapter_rank,
                                 rng, name=name)
    if kind == "moe":
        return MoeLoraAdapter.build(dim, dim, list(cfg.moe_ranks), tau, rng, name=name)
    if kind == "none":
        return None
    raise ConfigError(f"unknown adapter kind {kind!r}")


def attach_adapters(backbone: ToyBackbone, kind: str, cfg: ExperimentConfig, seed: int,
                    rank: int | None = None, tau: float | None = None,
                    label: str | None = None) -> SegmentationModel:
    """Fresh adapters on every (block, projection) slot plus head calibration."""
    rng = SeededRng(seed).split("adapters", kind)
    slots = []
    for layer in range(backbone.n_blocks):
        for tag in PROJECTION_TAGS:
            name = f"slot{layer}{tag}"
            adapter = build_slot_adapter(kind, cfg, rng.split(layer, tag), name,
                                         rank=rank, tau=tau)
            if adapter is not None:
                slots.append(AdapterSlot(layer, tag, adapter))
    calibration = HeadCalibration.build() if kind != "none" else None
    if label is None:
        label = kind if rank is None else f"{kind}{rank}"
    return SegmentationModel(backbone, slots, calibration, label=label)


def robustify(backbone: ToyBackbone, kind: str, cfg: ExperimentConfig, seed: int,
              bench_train: list, rank: int | None = None, tau: float | None = None,
              steps: int | None = None, log_path=None, label: str | None = None):
    """Train adapters of one kind on the corrupted training split."""
    model = attach_adapters(backbone, kind, cfg, seed, rank=rank, tau=tau, label=label)
    train_cfg = TrainConfig(
        learning_rate=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
        batch_size=cfg.batch_size,
        tau=cfg.tau if tau is None else tau,
        steps=cfg.steps if steps is None else steps,
        seed=seed,
    )
    history = fit(model, bench_train, train_cfg, log_path=log_path)
    return model, history


def score_rows(model: SegmentationModel, samples: list, label: str | None = None):
    return analysis.rows_from_eval(evaluate(model, samples), label or model.label)


# ---------------------------------------------------------------------------
# trained-model persistence (one file per adapter slot + head calibration)


def save_trained_model(run_dir, model: SegmentationModel) -> None:
    run_dir = Path(run_dir)
    slot_dir = run_dir / "adapters"
    slot_dir.mkdir(parents=True, exist_ok=True)
    for slot in model.slots:
        checkpoint.save_adapter(slot_dir / f"block{slot.layer}_{slot.tag}.ckpt", slot.adapter)
    if model.calibration is not None:
        checkpoint.save_calibration(run_dir / "calibration.ckpt", model.calibration)


def load_trained_model(run_dir, backbone: ToyBackbone,
                       label: str = "trained") -> SegmentationModel:
    run_dir = Path(run_dir)
    slot_dir = run_dir / "adapters"
    if not slot_dir.is_dir():
        raise CheckpointError(f"no adapters directory under {run_dir}")
    slots = []
    for path in sorted(slot_dir.glob("block*_*.ckpt")):
        stem = path.stem[len("block"):]
        layer_text, _, tag = stem.partition("_")
        if not layer_text.isdigit() or tag not in PROJECTION_TAGS:
            raise CheckpointError(f"unrecognized adapter checkpoint name {path.name!r}")
        slots.append(AdapterSlot(int(layer_text), tag, checkpoint.load_adapter(path)))
    if not slots:
        raise CheckpointError(f"no adapter checkpoints under {slot_dir}")
    calib_path = run_dir / "calibration.ckpt"
    calibration = checkpoint.load_calibration(calib_path) if calib_path.exists() else None
    return SegmentationModel(backbone, slots, calibration, label=label)


# ---------------------------------------------------------------------------
# sweeps


def _rank_run(args):
    backbone, rank, cfg, seed, bench_train, bench_test = args
    model, _ = robustify(backbone, "lora", cfg, seed, bench_train, rank=rank,
                         label=str(rank))
    return score_rows(model, bench_test, str(rank))


def rank_sweep(backbone: ToyBackbone, cfg: ExperimentConfig, seed: int,
               bench_train: list, bench_test: list, ranks=None,
               parallel: int | None = None) -> analysis.ScoreTable:
    """One fixed-rank adapter per rank, trained and scored independently."""
    parallel = cfg.parallel if parallel is None else parallel
    ranks = tuple(cfg.ranks) if ranks is None else tuple(ranks)
    if len(set(ranks)) != len(ranks):
        raise ConfigError(f"ranks must be distinct, got {ranks}")
    if any(r > cfg.dim for r in ranks):
        raise ConfigError(f"ranks must be <= {cfg.dim}, got {ranks}")
    jobs = [(backbone, rank, cfg, seed, bench_train, bench_test) for rank in ranks]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_rank_run, jobs))
    else:
        results = [_rank_run(job) for job in jobs]
    table = analysis.ScoreTable()
    for rows in results:
        table.extend(rows)
    return table


def _tau_run(args):
    backbone, tau, cfg, seed, bench_train, bench_test = args
    label = f"tau{tau:g}"
    model, _ = robustify(backbone, "gara", cfg, seed, bench_train, tau=tau, label=label)
    return tau, score_rows(model, bench_test, label)


def tau_sweep(backbone: ToyBackbone, cfg: ExperimentConfig, seed: int,
              bench_train: list, bench_test: list, taus=None,
              parallel: int | None = None):
    """Gated adapters retrained per temperature; returns (table, {tau: mean IoU})."""
    parallel = cfg.parallel if parallel is None else parallel
    taus = tuple(cfg.taus) if taus is None else tuple(taus)
    if any(t <= 0 for t in taus):
        raise ConfigError(f"taus must be > 0, got {taus}")
    jobs = [(backbone, tau, cfg, seed, bench_train, bench_test) for tau in taus]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_tau_run, jobs))
    else:
        results = [_tau_run(job) for job in jobs]
    table = analysis.ScoreTable()
    means = {}
    for tau, rows in results:
        table.extend(rows)
        means[tau] = float(sum(r.iou for r in rows) / len(rows))
    return table, means
