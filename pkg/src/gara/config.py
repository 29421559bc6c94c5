"""Experiment configuration: strict `key.path = value` text documents.

Every key has a pinned default; unknown keys are rejected with the line
number.  The fully-resolved document is echoed into each run directory so a
run can always be reproduced from its own artifacts.

Grammar, one setting per line:

    # comment
    trainer.steps = 500
    analysis.ranks = 1,2,4,8,16

Values are typed per key (int, float, string, or comma-separated lists);
text after an unquoted '#' is a comment.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from .bench import KINDS
from .errors import ConfigError

ADAPTER_KINDS = ("gara", "gara_lower", "gara_higher", "lora", "moe", "none")


def default_ranks(in_dim: int) -> tuple[int, int]:
    """Pool sizes: full-scale defaults (16, 256) when the feature width
    supports them, desk-scale (2, 16) otherwise."""
    return (16, 256) if in_dim >= 1024 else (2, 16)


@dataclass
class ExperimentConfig:
    seed: int = 0
    parallel: int = 1
    # backbone
    image_size: int = 32
    patch_size: int = 8
    ff_hidden: int = 64
    blocks: int = 2
    pretrain_steps: int = 2000
    pretrain_lr: float = 3e-3
    pretrain_batch: int = 8
    clean_train: int = 256
    clean_eval: int = 64
    clean_iou_min: float = 0.90
    backbone_checkpoint: str = ""
    # adapter
    adapter_kind: str = "gara"
    adapter_rank: int = 4
    r_lower: int = 0  # 0 = auto from feature width
    r_higher: int = 0
    tau: float = 0.5
    moe_ranks: tuple = (1, 2, 8, 16)
    adapter_checkpoint: str = ""
    # bench
    bench_seed: int = 1234
    holdout_kind: str = "salt_pepper"
    train_severities: tuple = (1, 2, 3)
    test_severities: tuple = (4, 5)
    train_per_cell: int = 20
    test_per_cell: int = 15
    # trainer; lr raised above the TrainConfig default for the small benchmark,
    # where 500 steps at 1e-4 barely move the adapters
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    batch_size: int = 8
    steps: int = 500
    # analysis
    ranks: tuple = (1, 2, 4, 8, 16)
    taus: tuple = (0.1, 0.5, 1.0, 2.0)
    scores_csv: str = ""

    @property
    def dim(self) -> int:
        return self.patch_size * self.patch_size

    def resolved_ranks(self) -> tuple[int, int]:
        auto = default_ranks(self.dim)
        lower = self.r_lower if self.r_lower > 0 else auto[0]
        higher = self.r_higher if self.r_higher > 0 else auto[1]
        return lower, higher

    def validate(self) -> "ExperimentConfig":
        if self.adapter_kind not in ADAPTER_KINDS:
            raise ConfigError(
                f"adapter.kind must be one of {ADAPTER_KINDS}, got {self.adapter_kind!r}"
            )
        if self.holdout_kind not in KINDS:
            raise ConfigError(f"bench.holdout_kind must be one of {KINDS}, got {self.holdout_kind!r}")
        if self.tau <= 0:
            raise ConfigError(f"adapter.tau must be > 0, got {self.tau}")
        if any(t <= 0 for t in self.taus):
            raise ConfigError(f"analysis.taus must all be > 0, got {self.taus}")
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"backbone.image_size {self.image_size} not divisible by patch {self.patch_size}"
            )
        for name in ("train_severities", "test_severities"):
            sev = getattr(self, name)
            if any(not 1 <= s <= 5 for s in sev):
                raise ConfigError(f"bench.{name} must be within 1..5, got {sev}")
        if len(set(self.ranks)) != len(self.ranks):
            raise ConfigError(f"analysis.ranks must be distinct, got {self.ranks}")
        if any(r > self.dim for r in self.ranks):
            raise ConfigError(f"analysis.ranks must be <= {self.dim}, got {self.ranks}")
        if self.parallel < 1:
            raise ConfigError(f"parallel must be >= 1, got {self.parallel}")
        return self


def _parse_int(text: str) -> int:
    return int(text, 0)


def _parse_int_list(text: str) -> tuple:
    return tuple(_parse_int(part.strip()) for part in text.split(",") if part.strip())


def _parse_float_list(text: str) -> tuple:
    return tuple(float(part.strip()) for part in text.split(",") if part.strip())


def _parse_str(text: str) -> str:
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    return text


# dotted key -> (dataclass field, parser)
KEYS = {
    "seed": ("seed", _parse_int),
    "parallel": ("parallel", _parse_int),
    "backbone.image_size": ("image_size", _parse_int),
    "backbone.patch_size": ("patch_size", _parse_int),
    "backbone.ff_hidden": ("ff_hidden", _parse_int),
    "backbone.blocks": ("blocks", _parse_int),
    "backbone.pretrain_steps": ("pretrain_steps", _parse_int),
    "backbone.pretrain_lr": ("pretrain_lr", float),
    "backbone.pretrain_batch": ("pretrain_batch", _parse_int),
    "backbone.clean_train": ("clean_train", _parse_int),
    "backbone.clean_eval": ("clean_eval", _parse_int),
    "backbone.clean_iou_min": ("clean_iou_min", float),
    "backbone.checkpoint": ("backbone_checkpoint", _parse_str),
    "adapter.kind": ("adapter_kind", _parse_str),
    "adapter.rank": ("adapter_rank", _parse_int),
    "adapter.r_lower": ("r_lower", _parse_int),
    "adapter.r_higher": ("r_higher", _parse_int),
    "adapter.tau": ("tau", float),
    "adapter.moe_ranks": ("moe_ranks", _parse_int_list),
    "adapter.checkpoint": ("adapter_checkpoint", _parse_str),
    "bench.seed": ("bench_seed", _parse_int),
    "bench.holdout_kind": ("holdout_kind", _parse_str),
    "bench.train_severities": ("train_severities", _parse_int_list),
    "bench.test_severities": ("test_severities", _parse_int_list),
    "bench.train_per_cell": ("train_per_cell", _parse_int),
    "bench.test_per_cell": ("test_per_cell", _parse_int),
    "trainer.learning_rate": ("learning_rate", float),
    "trainer.weight_decay": ("weight_decay", float),
    "trainer.batch_size": ("batch_size", _parse_int),
    "trainer.steps": ("steps", _parse_int),
    "analysis.ranks": ("ranks", _parse_int_list),
    "analysis.taus": ("taus", _parse_float_list),
    "analysis.scores_csv": ("scores_csv", _parse_str),
}

_FIELD_TO_KEY = {field_name: key for key, (field_name, _) in KEYS.items()}


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base if base is not None else ExperimentConfig()
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        field_name, parser = KEYS[key]
        try:
            updates[field_name] = parser(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    return replace(cfg, **updates)


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, base)


def _render_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def render_config(cfg: ExperimentConfig) -> str:
    """Stable textual form of the resolved config (parse(render(c)) == c)."""
    lines = []
    for key in sorted(KEYS):
        field_name, _ = KEYS[key]
        lines.append(f"{key} = {_render_value(getattr(cfg, field_name))}")
    return "\n".join(lines) + "\n"
