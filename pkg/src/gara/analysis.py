"""Rank-impact analysis: score tables, oracle selectors, gate telemetry.

The oracle selectors quantify how much headroom per-corruption or per-image
rank selection has over any single fixed rank: oracle_instance picks the
best rank per image, oracle_corrupt per corruption kind, and the dominance
chain oracle_instance >= oracle_corrupt >= best fixed rank holds for every
complete table by construction.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import DataError
from .trainer import EvalRow

CSV_HEADER = ("image_id", "corruption", "severity", "rank_or_model", "iou", "dice")
TELEMETRY_HEADER = ("corruption", "z_space", "effective_rank", "activation_bits")


@dataclass
class ScoreRow:
    image_id: int
    corruption: str
    severity: int
    rank_or_model: str
    iou: float
    dice: float


class ScoreTable:
    """Rows over (image, corruption, severity) x model axes."""

    def __init__(self, rows: list[ScoreRow] | None = None):
        self.rows: list[ScoreRow] = list(rows) if rows else []

    def extend(self, rows) -> None:
        self.rows.extend(rows)

    def models(self) -> list[str]:
        return sorted({r.rank_or_model for r in self.rows})

    def model_ranks(self) -> list[int]:
        """Model ids as integer ranks; non-integer ids are a data error here."""
        ranks = []
        for m in self.models():
            try:
                ranks.append(int(m))
            except ValueError:
                raise DataError(f"rank oracle needs integer rank ids, got {m!r}") from None
        return sorted(ranks)

    def cells(self) -> dict:
        """(image_id, corruption, severity) -> {model: ScoreRow}."""
        grid: dict = {}
        for r in self.rows:
            key = (r.image_id, r.corruption, r.severity)
            per_model = grid.setdefault(key, {})
            if r.rank_or_model in per_model:
                raise DataError(f"duplicate cell {key} for model {r.rank_or_model!r}")
            per_model[r.rank_or_model] = r
        return grid

    def require_complete(self) -> dict:
        grid = self.cells()
        models = set(self.models())
        for key, per_model in grid.items():
            missing = models - set(per_model)
            if missing:
                raise DataError(f"incomplete grid: cell {key} missing models {sorted(missing)}")
        if not grid:
            raise DataError("empty score table")
        return grid

    def mean_iou(self, model: str) -> float:
        vals = [r.iou for r in self.rows if r.rank_or_model == model]
        if not vals:
            raise DataError(f"no rows for model {model!r}")
        return float(np.mean(vals))

    def validate_scores(self) -> None:
        for r in self.rows:
            if not (0.0 <= r.iou <= 1.0 and 0.0 <= r.dice <= 1.0):
                raise DataError(f"score out of [0,1] for image {r.image_id}: {r.iou}, {r.dice}")


def rows_from_eval(eval_rows: list[EvalRow], model_id: str) -> list[ScoreRow]:
    return [
        ScoreRow(r.image_id, r.corruption, r.severity, model_id, r.iou, r.dice)
        for r in eval_rows
    ]


# ---------------------------------------------------------------------------
# oracles


def _rank_order_key(model: str):
    # tie-break prefers the smaller rank; integer ids sort numerically
    try:
        return (0, int(model))
    except ValueError:
        return (1, model)


def best_fixed(table: ScoreTable) -> tuple[str, float]:
    """The single model with the best pooled mean IoU (ties to smaller rank)."""
    table.require_complete()
    best = None
    for model in sorted(table.models(), key=_rank_order_key):
        mean = table.mean_iou(model)
        if best is None or mean > best[1]:
            best = (model, mean)
    return best


@dataclass
class OracleReport:
    per_kind_choice: dict = field(default_factory=dict)
    aggregate: float = 0.0
    # pooled mean over images (not mean of per-kind means)
    aggregation: str = "pooled_mean_over_images"


def oracle_corrupt(table: ScoreTable) -> OracleReport:
    """Best rank per corruption kind, then pooled mean using each kind's choice."""
    grid = table.require_complete()
    models = sorted(table.models(), key=_rank_order_key)
    kinds = sorted({key[1] for key in grid})
    choice = {}
    for kind in kinds:
        best_model, best_mean = None, -1.0
        for model in models:
            vals = [per_model[model].iou for key, per_model in grid.items() if key[1] == kind]
            mean = float(np.mean(vals))
            if mean > best_mean:
                best_model, best_mean = model, mean
        choice[kind] = best_model
    scores = [per_model[choice[key[1]]].iou for key, per_model in grid.items()]
    return OracleReport(per_kind_choice=choice, aggregate=float(np.mean(scores)))


def oracle_instance(table: ScoreTable) -> float:
    """Mean of per-image maxima over models."""
    grid = table.require_complete()
    maxima = [max(row.iou for row in per_model.values()) for per_model in grid.values()]
    return float(np.mean(maxima))


def dominance_summary(table: ScoreTable) -> dict:
    """The three aggregates of the rank study, in dominance order."""
    model, fixed = best_fixed(table)
    corrupt = oracle_corrupt(table)
    instance = oracle_instance(table)
    return {
        "best_fixed_model": model,
        "best_fixed": fixed,
        "oracle_corrupt": corrupt.aggregate,
        "oracle_corrupt_choice": corrupt.per_kind_choice,
        "oracle_instance": instance,
        "aggregation": corrupt.aggregation,
        "argmax_varies_across_kinds": len(set(corrupt.per_kind_choice.values())) > 1,
    }


# ---------------------------------------------------------------------------
# CSV


def write_scores_csv(path, table: ScoreTable) -> None:
    table.validate_scores()
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for r in table.rows:
            writer.writerow(
                [r.image_id, r.corruption, r.severity, r.rank_or_model, repr(r.iou), repr(r.dice)]
            )


def read_scores_csv(path) -> ScoreTable:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = tuple(next(reader, ()))
        if header != CSV_HEADER:
            raise DataError(f"unexpected scores header {header!r}")
        rows = [
            ScoreRow(int(rec[0]), rec[1], int(rec[2]), rec[3], float(rec[4]), float(rec[5]))
            for rec in reader
            if rec
        ]
    return ScoreTable(rows)


# ---------------------------------------------------------------------------
# gate telemetry


def hamming(a, b) -> int:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DataError(f"hamming needs equal-length vectors, got {a.shape} vs {b.shape}")
    return int(np.sum(a != b))


@dataclass
class GateReport:
    per_kind: dict = field(default_factory=dict)


def gate_report(decisions_by_kind: dict) -> GateReport:
    """Summarize gate behaviour per corruption kind.

    Input maps corruption kind -> list of GateDecision.  Per kind we report
    the mean effective rank, how often the higher pool was selected, the
    activation frequency per component, and the mean pairwise Hamming
    distance between activation vectors of decisions that picked the same
    pool and the same effective rank (rank-matched disagreement is what makes
    the telemetry interesting: same budget, different components).
    """
    if not decisions_by_kind:
        raise DataError("gate_report needs at least one corruption group")
    report = GateReport()
    for kind, decisions in decisions_by_kind.items():
        if not decisions:
            raise DataError(f"corruption {kind!r} has no decisions")
        eff = [d.effective_rank for d in decisions]
        higher = [1.0 if d.use_higher else 0.0 for d in decisions]
        freq: dict = {}
        for pool in ("lower", "higher"):
            bits = [
                d.lower_bits if pool == "lower" else d.higher_bits
                for d in decisions
                if (d.lower_bits if pool == "lower" else d.higher_bits) is not None
            ]
            if bits:
                freq[pool] = np.mean(np.stack(bits), axis=0).tolist()
        groups: dict = {}
        for d in decisions:
            groups.setdefault((d.use_higher, d.effective_rank), []).append(d.bits)
        distances = []
        for members in groups.values():
            for x, y in combinations(members, 2):
                distances.append(hamming(x, y))
        report.per_kind[kind] = {
            "count": len(decisions),
            "mean_effective_rank": float(np.mean(eff)),
            "fraction_higher": float(np.mean(higher)),
            "activation_frequency": freq,
            "mean_hamming_same_rank": float(np.mean(distances)) if distances else 0.0,
            "compared_pairs": len(distances),
        }
    return report


def write_telemetry_csv(path, rows: list) -> None:
    """rows: (corruption kind, GateDecision) pairs, one CSV line each."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(TELEMETRY_HEADER)
        for kind, decision in rows:
            writer.writerow(
                [kind, int(decision.use_higher), decision.effective_rank, decision.bit_string()]
            )


def read_telemetry_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = tuple(next(reader, ()))
        if header != TELEMETRY_HEADER:
            raise DataError(f"unexpected telemetry header {header!r}")
        return [
            {"corruption": rec[0], "z_space": int(rec[1]), "effective_rank": int(rec[2]),
             "activation_bits": rec[3]}
            for rec in reader
            if rec
        ]
