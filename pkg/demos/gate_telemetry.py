"""What the trained gates actually do, per corruption kind.

Trains a gated adapter briefly, then walks the degraded test set and
aggregates the gate decisions: mean effective rank, how often the
higher pool wins, per-component activation rates, and the Hamming
distance between activation patterns of equal-budget decisions (same
rank, different components -- the interesting kind of disagreement).
Runtime: ~25 s.
"""
from common import ensure_backbone
from gara import analysis
from gara.adapter import GateDecision
from gara.config import ExperimentConfig
from gara.experiment import make_bench_sets, robustify


def main():
    cfg = ExperimentConfig().validate()
    backbone = ensure_backbone(cfg)
    bench_train, bench_test = make_bench_sets(cfg)

    print(f"training gated adapters for {cfg.steps} steps ...")
    model, _ = robustify(backbone, "gara", cfg, seed=0, bench_train=bench_train)

    by_kind = {}
    for sample in bench_test:
        _, slot_decisions = model.forward_image(sample.corrupted, train=False)
        for slot in slot_decisions:
            if isinstance(slot.decision, GateDecision):
                by_kind.setdefault(sample.spec.kind, []).append(slot.decision)

    report = analysis.gate_report(by_kind)
    print(f"\n{len(bench_test)} test images x {len(model.slots)} adapter slots:")
    for kind in sorted(report.per_kind):
        row = report.per_kind[kind]
        print(f"\n  {kind} ({row['count']} decisions)")
        print(f"    mean effective rank   {row['mean_effective_rank']:.2f}")
        print(f"    higher-pool fraction  {row['fraction_higher']:.2f}")
        for pool, freq in sorted(row["activation_frequency"].items()):
            bars = " ".join(f"{f:.2f}" for f in freq)
            print(f"    {pool} activation     [{bars}]")
        print(f"    rank-matched Hamming  {row['mean_hamming_same_rank']:.2f} "
              f"over {row['compared_pairs']} pairs")


if __name__ == "__main__":
    main()
