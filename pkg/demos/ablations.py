"""Ablations: what each part of the gating buys.

Trains the full gated adapter against its two single-pool variants
(the space choice removed), then sweeps the gate temperature to show
accuracy is flat across a wide range of tau.  Runtime: ~2 min.
"""
import numpy as np

from common import ensure_backbone
from gara.config import ExperimentConfig
from gara.experiment import make_bench_sets, robustify, score_rows

SEED = 0
TAUS = (0.1, 0.5, 1.0, 2.0)


def degraded_iou(backbone, kind, cfg, bench_train, bench_test, tau=None):
    model, _ = robustify(backbone, kind, cfg, SEED, bench_train, tau=tau)
    return float(np.mean([r.iou for r in score_rows(model, bench_test)]))


def main():
    cfg = ExperimentConfig().validate()
    backbone = ensure_backbone(cfg)
    bench_train, bench_test = make_bench_sets(cfg)
    r_lower, r_higher = cfg.resolved_ranks()

    print("\npool ablation (one seed):")
    for kind, note in (
        ("gara", f"both pools, {r_lower}+{r_higher} components"),
        ("gara_lower", f"lower pool only, max rank {r_lower}"),
        ("gara_higher", f"higher pool only, max rank {r_higher}"),
    ):
        iou = degraded_iou(backbone, kind, cfg, bench_train, bench_test)
        print(f"  {kind:<12s} {iou:.4f}  ({note})")

    print("\ngate temperature sweep:")
    means = {}
    for tau in TAUS:
        means[tau] = degraded_iou(backbone, "gara", cfg, bench_train, bench_test, tau=tau)
        print(f"  tau {tau:<4g} {means[tau]:.4f}")
    spread = max(means.values()) - min(means.values())
    print(f"  spread {spread:.4f} IoU across {len(TAUS)} temperatures")


if __name__ == "__main__":
    main()
