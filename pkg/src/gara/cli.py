"""Command-line front end for the gated-adapter benchmark pipeline.

Every run writes its artifacts into a fresh directory under --out
(<command>-<timestamp>-seed<seed>) together with the fully resolved
configuration, so results can be traced back to their inputs.

Exit codes: 0 success, 2 configuration problem, 3 missing or unreadable
checkpoint, 4 training diverged.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, bench, checkpoint, experiment
from .adapter import GaraAdapter, GateDecision, param_count, rank_space_param_count
from .config import ExperimentConfig, load_config, render_config
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DivergenceError,
    UsageError,
)
from .trainer import write_train_log

EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_DIVERGED = 4

COMMANDS = (
    "gen-data",
    "pretrain",
    "train",
    "eval",
    "sweep-rank",
    "oracle",
    "sweep-tau",
    "gate-report",
    "param-count",
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gara",
        description="Train and analyze gated low-rank adapters on the "
        "synthetic corruption benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    help_lines = {
        "gen-data": "generate the clean pairs and corruption benchmark splits",
        "pretrain": "train and freeze the clean backbone",
        "train": "fit adapters of the configured kind on the corrupted split",
        "eval": "score a trained adapter checkpoint on the test split",
        "sweep-rank": "train one fixed-rank adapter per rank and compare",
        "oracle": "rank-selection analysis of an existing scores CSV",
        "sweep-tau": "retrain the gated adapter across temperatures",
        "gate-report": "per-corruption gate telemetry for a trained checkpoint",
        "param-count": "print adapter parameter counts for the configuration",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=help_lines[name])
        p.add_argument("--config", default=None, help="config file (key = value lines)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default="runs", help="parent directory for run outputs")
        p.add_argument("--parallel", type=int, default=None,
                       help="worker processes for sweeps")
    return parser


def _resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config is not None:
        cfg = load_config(args.config, cfg)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.parallel is not None:
        cfg = dataclasses.replace(cfg, parallel=args.parallel)
    return cfg.validate()


def _make_run_dir(out, command: str, seed: int) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = Path(out) / f"{command}-{stamp}-seed{seed}"
    run_dir = base
    counter = 2
    while run_dir.exists():
        run_dir = base.with_name(f"{base.name}-{counter}")
        counter += 1
    run_dir.mkdir(parents=True)
    return run_dir


def _echo_config(cfg: ExperimentConfig, run_dir: Path | None) -> None:
    text = render_config(cfg)
    if run_dir is not None:
        (run_dir / "resolved.cfg").write_text(text, encoding="utf-8")
        print(f"run dir: {run_dir}")
    sys.stdout.write(text)


def _load_backbone(cfg: ExperimentConfig):
    if not cfg.backbone_checkpoint:
        raise ConfigError("backbone.checkpoint is required (run `gara pretrain` first)")
    return checkpoint.load_backbone(cfg.backbone_checkpoint)


def _mean_iou(rows) -> float:
    return float(np.mean([r.iou for r in rows]))


def _print_by_kind(rows) -> None:
    by_kind: dict[str, list] = {}
    for r in rows:
        by_kind.setdefault(r.corruption, []).append(r.iou)
    for kind in sorted(by_kind):
        print(f"  {kind}: IoU {np.mean(by_kind[kind]):.4f} (n={len(by_kind[kind])})")


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen_data(cfg: ExperimentConfig, run_dir: Path) -> int:
    clean_train, clean_eval = experiment.make_clean_sets(cfg)
    bench_train, bench_test = experiment.make_bench_sets(cfg)
    bench.save_clean_pairs(run_dir / "clean_train.bin", clean_train)
    bench.save_clean_pairs(run_dir / "clean_eval.bin", clean_eval)
    bench.save_bench(run_dir / "bench_train.bin", bench_train)
    bench.save_bench(run_dir / "bench_test.bin", bench_test)
    bench.write_manifest(run_dir / "bench_train.jsonl", bench_train)
    bench.write_manifest(run_dir / "bench_test.jsonl", bench_test)
    print(f"clean pairs: {len(clean_train)} train / {len(clean_eval)} eval")
    print(f"bench: {len(bench_train)} train / {len(bench_test)} test samples")
    return 0


def _cmd_pretrain(cfg: ExperimentConfig, run_dir: Path) -> int:
    backbone, report = experiment.pretrain(cfg)
    checkpoint.save_backbone(run_dir / "backbone.ckpt", backbone)
    history = [{"step": i, "loss": v} for i, v in enumerate(report["loss_history"])]
    write_train_log(run_dir / "pretrain_log.jsonl", history)
    print(f"clean IoU {report['clean_iou']:.4f} after {report['steps']} steps")
    print(f"backbone checkpoint: {run_dir / 'backbone.ckpt'}")
    return 0


def _cmd_train(cfg: ExperimentConfig, run_dir: Path) -> int:
    backbone = _load_backbone(cfg)
    bench_train, bench_test = experiment.make_bench_sets(cfg)
    rank = cfg.adapter_rank if cfg.adapter_kind == "lora" else None
    model, _ = experiment.robustify(
        backbone, cfg.adapter_kind, cfg, cfg.seed, bench_train,
        rank=rank, log_path=run_dir / "train_log.jsonl",
    )
    experiment.save_trained_model(run_dir, model)
    rows = experiment.score_rows(model, bench_test)
    table = analysis.ScoreTable(rows)
    analysis.write_scores_csv(run_dir / "scores.csv", table)
    print(f"{model.label}: test IoU {_mean_iou(rows):.4f}")
    _print_by_kind(rows)
    return 0


def _cmd_eval(cfg: ExperimentConfig, run_dir: Path) -> int:
    backbone = _load_backbone(cfg)
    if not cfg.adapter_checkpoint:
        raise ConfigError("adapter.checkpoint is required (a `gara train` run directory)")
    model = experiment.load_trained_model(cfg.adapter_checkpoint, backbone,
                                          label=cfg.adapter_kind)
    _, bench_test = experiment.make_bench_sets(cfg)
    rows = experiment.score_rows(model, bench_test)
    analysis.write_scores_csv(run_dir / "scores.csv", analysis.ScoreTable(rows))
    print(f"{model.label}: test IoU {_mean_iou(rows):.4f}")
    _print_by_kind(rows)
    return 0


def _cmd_sweep_rank(cfg: ExperimentConfig, run_dir: Path) -> int:
    backbone = _load_backbone(cfg)
    bench_train, bench_test = experiment.make_bench_sets(cfg)
    table = experiment.rank_sweep(backbone, cfg, cfg.seed, bench_train, bench_test)
    analysis.write_scores_csv(run_dir / "scores.csv", table)
    for model_id in sorted(table.models(), key=int):
        print(f"  rank {model_id}: IoU {table.mean_iou(model_id):.4f}")
    return _report_oracle(table, run_dir)


def _report_oracle(table: analysis.ScoreTable, run_dir: Path) -> int:
    summary = analysis.dominance_summary(table)
    with open(run_dir / "oracle.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    print(f"best fixed model : {summary['best_fixed_model']} "
          f"(IoU {summary['best_fixed']:.4f})")
    print(f"per-kind oracle  : IoU {summary['oracle_corrupt']:.4f} "
          f"choices {summary['oracle_corrupt_choice']}")
    print(f"per-image oracle : IoU {summary['oracle_instance']:.4f}")
    print(f"oracle headroom  : {summary['oracle_instance'] - summary['best_fixed']:.4f}")
    return 0


def _cmd_oracle(cfg: ExperimentConfig, run_dir: Path) -> int:
    if not cfg.scores_csv:
        raise ConfigError("analysis.scores_csv is required for the oracle command")
    table = analysis.read_scores_csv(cfg.scores_csv)
    return _report_oracle(table, run_dir)


def _cmd_sweep_tau(cfg: ExperimentConfig, run_dir: Path) -> int:
    backbone = _load_backbone(cfg)
    bench_train, bench_test = experiment.make_bench_sets(cfg)
    table, means = experiment.tau_sweep(backbone, cfg, cfg.seed, bench_train, bench_test)
    analysis.write_scores_csv(run_dir / "scores.csv", table)
    with open(run_dir / "tau_means.json", "w", encoding="utf-8") as f:
        json.dump({str(k): v for k, v in sorted(means.items())}, f, indent=2)
    for tau, mean in sorted(means.items()):
        print(f"  tau {tau:g}: IoU {mean:.4f}")
    spread = max(means.values()) - min(means.values())
    print(f"spread across temperatures: {spread:.4f}")
    return 0


def _cmd_gate_report(cfg: ExperimentConfig, run_dir: Path) -> int:
    backbone = _load_backbone(cfg)
    if not cfg.adapter_checkpoint:
        raise ConfigError("adapter.checkpoint is required (a `gara train` run directory)")
    model = experiment.load_trained_model(cfg.adapter_checkpoint, backbone)
    _, bench_test = experiment.make_bench_sets(cfg)
    by_kind: dict[str, list] = {}
    telemetry = []
    for sample in bench_test:
        kind = sample.spec.kind
        _, slot_decisions = model.forward_image(sample.corrupted, train=False)
        for slot in slot_decisions:
            if isinstance(slot.decision, GateDecision):
                by_kind.setdefault(kind, []).append(slot.decision)
                telemetry.append((kind, slot.decision))
    if not by_kind:
        raise ConfigError("gate-report needs a gated adapter checkpoint "
                          "(adapter.kind gara, gara_lower, or gara_higher)")
    report = analysis.gate_report(by_kind)
    analysis.write_telemetry_csv(run_dir / "telemetry.csv", telemetry)
    with open(run_dir / "gate_report.json", "w", encoding="utf-8") as f:
        json.dump(report.per_kind, f, indent=2, sort_keys=True)
    for kind in sorted(report.per_kind):
        row = report.per_kind[kind]
        print(f"  {kind}: mean rank {row['mean_effective_rank']:.2f}, "
              f"higher {row['fraction_higher']:.2f}, "
              f"rank-matched Hamming {row['mean_hamming_same_rank']:.2f}")
    return 0


def _cmd_param_count(cfg: ExperimentConfig) -> int:
    from .rng import SeededRng

    rng = SeededRng(cfg.seed).split("param-count")
    rank = cfg.adapter_rank if cfg.adapter_kind == "lora" else None
    adapter = experiment.build_slot_adapter(cfg.adapter_kind, cfg, rng, "slot", rank=rank)
    if adapter is None:
        print("adapter.kind = none: 0 adapter parameters")
        return 0
    total = param_count(adapter)
    slots = cfg.blocks * 3
    print(f"adapter.kind = {cfg.adapter_kind}")
    print(f"per-slot parameters : {total}")
    if isinstance(adapter, GaraAdapter):
        spaces = rank_space_param_count(adapter)
        print(f"  rank spaces       : {spaces}")
        print(f"  gating networks   : {total - spaces}")
    print(f"model total ({cfg.blocks} blocks x q/k/v = {slots} slots): {total * slots}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if args.command == "param-count":
            _echo_config(cfg, None)
            return _cmd_param_count(cfg)
        run_dir = _make_run_dir(args.out, args.command, cfg.seed)
        _echo_config(cfg, run_dir)
        handler = {
            "gen-data": _cmd_gen_data,
            "pretrain": _cmd_pretrain,
            "train": _cmd_train,
            "eval": _cmd_eval,
            "sweep-rank": _cmd_sweep_rank,
            "oracle": _cmd_oracle,
            "sweep-tau": _cmd_sweep_tau,
            "gate-report": _cmd_gate_report,
        }[args.command]
        return handler(cfg, run_dir)
    except (ConfigError, DataError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    raise SystemExit(main())
