"""Shared plumbing for the demo scripts: one cached backbone on disk."""
from pathlib import Path

from gara import checkpoint
from gara.config import ExperimentConfig
from gara.experiment import pretrain

OUT = Path(__file__).resolve().parent / "out"


def ensure_backbone(cfg: ExperimentConfig):
    """Pretrain once, then reuse the checkpoint across demo runs."""
    OUT.mkdir(exist_ok=True)
    path = OUT / "backbone.ckpt"
    if path.exists():
        print(f"reusing backbone checkpoint {path}")
        return checkpoint.load_backbone(path)
    print("pretraining the clean backbone (one-time, ~10 s) ...")
    backbone, report = pretrain(cfg)
    checkpoint.save_backbone(path, backbone)
    print(f"  clean IoU {report['clean_iou']:.4f} after {report['steps']} steps")
    return backbone
