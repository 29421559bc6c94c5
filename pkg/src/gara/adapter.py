"""Gated-rank adapters.

A low-rank weight update is decomposed into rank-1 components b_i a_i^T kept
in two disjoint pools, a small one ("lower", max rank r_lower) and a large
one ("higher", max rank r_higher).  Per input, a scalar gate picks the pool
and a per-component bit vector picks which rank-1 terms contribute:

    delta_W = (1 - z_space) * sum_i zL_i * bL_i aL_i^T
            + z_space      * sum_j zH_j * bH_j aH_j^T

During training each bit is a Gumbel-Sigmoid sample pushed through a hard
threshold with straight-through gradients; at evaluation the noise is
dropped and the decision is the deterministic sign of the gate logit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Parameter
from .errors import ConfigError, ShapeError, UsageError
from .linalg import as_f64, check_matrix, check_vector
from .nn import Mlp
from .rng import SeededRng

LOWER = "lower"
HIGHER = "higher"

PIN_LOGIT = 50.0  # saturates f64 sigmoid to exactly 0.0 / 1.0


def _gate_hidden(in_dim: int) -> int:
    return max(in_dim // 4, 1)


@dataclass
class RankSpace:
    """One pool of rank-1 components: rows of `down` pair with columns of `up`."""

    label: str
    down: Parameter  # (max_rank, K), the a-side
    up: Parameter    # (D, max_rank), the b-side

    @property
    def max_rank(self) -> int:
        return self.down.value.shape[0]

    @property
    def in_dim(self) -> int:
        return self.down.value.shape[1]

    @property
    def out_dim(self) -> int:
        return self.up.value.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.down, self.up]


class GatingNetworks:
    """Gate heads for one adapter: space selector plus per-pool component selectors."""

    def __init__(self, space_mlp: Mlp, lower_mlp: Mlp, higher_mlp: Mlp, tau: float):
        if tau <= 0:
            raise ConfigError(f"tau must be > 0, got {tau}")
        if space_mlp.out_width != 1:
            raise ConfigError(f"space gate must emit 1 logit, got {space_mlp.out_width}")
        self.space_mlp = space_mlp
        self.lower_mlp = lower_mlp
        self.higher_mlp = higher_mlp
        self.tau = float(tau)

    def component_mlp(self, label: str) -> Mlp:
        if label == LOWER:
            return self.lower_mlp
        if label == HIGHER:
            return self.higher_mlp
        raise UsageError(f"unknown rank space label {label!r}")

    def parameters(self) -> list[Parameter]:
        return (
            self.space_mlp.parameters()
            + self.lower_mlp.parameters()
            + self.higher_mlp.parameters()
        )


@dataclass
class GateDecision:
    """Hard gate outcome for one input, with soft values kept for telemetry.

    In Eval mode only the selected pool's bits are computed; the other pool's
    entries stay None.
    """

    use_higher: bool
    space_soft: float
    lower_bits: np.ndarray | None = None
    higher_bits: np.ndarray | None = None
    lower_soft: np.ndarray | None = None
    higher_soft: np.ndarray | None = None

    @property
    def bits(self) -> np.ndarray:
        chosen = self.higher_bits if self.use_higher else self.lower_bits
        if chosen is None:
            raise UsageError("selected space has no recorded bits")
        return chosen

    @property
    def effective_rank(self) -> int:
        return int(self.bits.sum())

    def bit_string(self) -> str:
        return "".join(str(int(b)) for b in self.bits)


class GaraAdapter:
    """Two rank pools plus their gating networks."""

    def __init__(self, lower: RankSpace, higher: RankSpace, gates: GatingNetworks):
        if lower.in_dim != higher.in_dim or lower.out_dim != higher.out_dim:
            raise ShapeError(
                f"rank pools disagree on dims: lower ({lower.out_dim},{lower.in_dim})"
                f" vs higher ({higher.out_dim},{higher.in_dim})"
            )
        self.lower = lower
        self.higher = higher
        self.gates = gates

    @property
    def in_dim(self) -> int:
        return self.lower.in_dim

    @property
    def out_dim(self) -> int:
        return self.lower.out_dim

    @property
    def tau(self) -> float:
        return self.gates.tau

    @classmethod
    def build(
        cls,
        out_dim: int,
        in_dim: int,
        r_lower: int,
        r_higher: int,
        tau: float,
        rng: SeededRng,
        name: str = "gara",
    ) -> "GaraAdapter":
        _check_rank_args(out_dim, in_dim, r_lower, r_higher)
        lower = _build_space(LOWER, out_dim, in_dim, r_lower, rng.split(name, LOWER), f"{name}.lower")
        higher = _build_space(HIGHER, out_dim, in_dim, r_higher, rng.split(name, HIGHER), f"{name}.higher")
        hidden = _gate_hidden(in_dim)
        gates = GatingNetworks(
            space_mlp=Mlp([in_dim, hidden, 1], rng.split(name, "space_mlp"), f"{name}.space_mlp", final_bias=1.0),
            lower_mlp=Mlp([in_dim, hidden, hidden, r_lower], rng.split(name, "lower_mlp"), f"{name}.lower_mlp", final_bias=1.0),
            higher_mlp=Mlp([in_dim, hidden, hidden, r_higher], rng.split(name, "higher_mlp"), f"{name}.higher_mlp", final_bias=1.0),
            tau=tau,
        )
        return cls(lower, higher, gates)

    def space(self, label: str) -> RankSpace:
        if label == LOWER:
            return self.lower
        if label == HIGHER:
            return self.higher
        raise UsageError(f"unknown rank space label {label!r}")

    def parameters(self) -> list[Parameter]:
        return self.lower.parameters() + self.higher.parameters() + self.gates.parameters()


class SingleSpaceAdapter:
    """Ablation variant: one rank pool with component gating, no space gate."""

    def __init__(self, space: RankSpace, mlp: Mlp, tau: float):
        if tau <= 0:
            raise ConfigError(f"tau must be > 0, got {tau}")
        self.space = space
        self.mlp = mlp
        self.tau = float(tau)

    @property
    def in_dim(self) -> int:
        return self.space.in_dim

    @property
    def out_dim(self) -> int:
        return self.space.out_dim

    @property
    def label(self) -> str:
        return self.space.label

    @classmethod
    def build(
        cls,
        out_dim: int,
        in_dim: int,
        rank: int,
        tau: float,
        rng: SeededRng,
        label: str = LOWER,
        name: str = "single",
    ) -> "SingleSpaceAdapter":
        if rank < 1:
            raise ConfigError(f"rank must be >= 1, got {rank}")
        if rank > in_dim // 2:
            raise ConfigError(f"rank {rank} exceeds in_dim/2 = {in_dim // 2}")
        space = _build_space(label, out_dim, in_dim, rank, rng.split(name, "space"), f"{name}.{label}")
        hidden = _gate_hidden(in_dim)
        mlp = Mlp([in_dim, hidden, hidden, rank], rng.split(name, "mlp"), f"{name}.mlp", final_bias=1.0)
        return cls(space, mlp, tau)

    def parameters(self) -> list[Parameter]:
        return self.space.parameters() + self.mlp.parameters()


def _check_rank_args(out_dim: int, in_dim: int, r_lower: int, r_higher: int) -> None:
    if r_lower < 1:
        raise ConfigError(f"r_lower must be >= 1, got {r_lower}")
    if r_lower >= r_higher:
        raise ConfigError(f"need r_lower < r_higher, got {r_lower} >= {r_higher}")
    if r_higher > in_dim // 2:
        raise ConfigError(f"r_higher {r_higher} exceeds in_dim/2 = {in_dim // 2}")
    if out_dim < 1 or in_dim < 1:
        raise ConfigError(f"bad adapter dims ({out_dim}, {in_dim})")


def _build_space(label: str, out_dim: int, in_dim: int, rank: int, rng: SeededRng, name: str) -> RankSpace:
    # input-side rows random, output-side columns zero: delta_W = 0 at init
    down = rng.normal(size=(rank, in_dim), scale=1.0 / np.sqrt(in_dim))
    up = np.zeros((out_dim, rank))
    return RankSpace(label, Parameter(down, f"{name}.down"), Parameter(up, f"{name}.up"))


# ---------------------------------------------------------------------------
# gating


def gate_space(gates: GatingNetworks, feature, rng: SeededRng | None = None,
               train: bool = False, noise=None):
    """Pool-selection gate.

    Train: z = hard(sigmoid((logit + G)/tau)) with straight-through backward;
    returns (bit Node of shape (1,), soft value).  Eval: no noise, no tape;
    returns (0.0 or 1.0, sigmoid(logit)).  Strictly-greater threshold, so a
    soft value of exactly 0.5 resolves to 0.
    """
    if train:
        if noise is None:
            if rng is None:
                raise UsageError("train-mode gating needs an rng (or explicit noise)")
            noise = rng.split("space").gumbel(1)
        logit = gates.space_mlp.logits(feature, train=True)
        soft = ag.sigmoid(ag.scalar_mul(1.0 / gates.tau, ag.add(logit, as_f64(noise))))
        z = ag.hard_threshold_st(soft)
        return z, float(soft.value[0])
    logit = gates.space_mlp.logits(ag.value_of(feature), train=False)
    soft = float(ag.np_sigmoid(logit)[0])
    return (1.0 if soft > 0.5 else 0.0), soft


def gate_components(gates: GatingNetworks, feature, space: str,
                    rng: SeededRng | None = None, train: bool = False, noise=None):
    """Per-component bit vector for one pool; same recipe as gate_space, elementwise."""
    mlp = gates.component_mlp(space)
    if train:
        if noise is None:
            if rng is None:
                raise UsageError("train-mode gating needs an rng (or explicit noise)")
            noise = rng.split("components", space).gumbel(mlp.out_width)
        logit = mlp.logits(feature, train=True)
        soft = ag.sigmoid(ag.scalar_mul(1.0 / gates.tau, ag.add(logit, as_f64(noise))))
        z = ag.hard_threshold_st(soft)
        return z, soft.value.copy()
    logit = mlp.logits(ag.value_of(feature), train=False)
    soft = ag.np_sigmoid(logit)
    return (soft > 0.5).astype(np.float64), soft


# ---------------------------------------------------------------------------
# composition


def compose_delta(adapter: GaraAdapter, z_space, z_lower, z_higher) -> np.ndarray:
    """Materialize delta_W from hard gate values (plain numpy)."""
    zl = check_vector(z_lower, "z_lower")
    zh = check_vector(z_higher, "z_higher")
    if zl.shape[0] != adapter.lower.max_rank:
        raise ShapeError(f"z_lower length {zl.shape[0]} != r_lower {adapter.lower.max_rank}")
    if zh.shape[0] != adapter.higher.max_rank:
        raise ShapeError(f"z_higher length {zh.shape[0]} != r_higher {adapter.higher.max_rank}")
    zs = float(np.asarray(z_space).reshape(()))
    dl = (adapter.lower.up.value * zl[None, :]) @ adapter.lower.down.value
    dh = (adapter.higher.up.value * zh[None, :]) @ adapter.higher.down.value
    return (1.0 - zs) * dl + zs * dh


def _branch_vec(space: RankSpace, x, z, train: bool):
    """up @ (z * (down @ x)) for one pool; z is the component bit vector."""
    down = space.down if train else space.down.value
    up = space.up if train else space.up.value
    u = ag.matvec(down, x)
    v = ag.mul(z, u)
    return ag.matvec(up, v)


def _branch_tokens(space: RankSpace, tokens, z, train: bool):
    """Row-wise branch action on a (T, K) token matrix -> (T, D)."""
    down = space.down if train else space.down.value
    up = space.up if train else space.up.value
    u = ag.matmul(tokens, ag.transpose(down))
    v = ag.scale_cols(u, z)
    return ag.matmul(v, ag.transpose(up))


def _train_decision(zs_value: float, zl, zl_soft, zh, zh_soft, space_soft: float) -> GateDecision:
    return GateDecision(
        use_higher=bool(zs_value > 0.5),
        space_soft=space_soft,
        lower_bits=np.asarray(zl, dtype=np.int64),
        higher_bits=np.asarray(zh, dtype=np.int64),
        lower_soft=zl_soft,
        higher_soft=zh_soft,
    )


def _gara_delta(adapter: GaraAdapter, x, feature, rng: SeededRng | None, train: bool,
                branch_fn):
    """Shared vector/token delta computation; branch_fn applies one pool."""
    gates = adapter.gates
    if train:
        zs, s_soft = gate_space(gates, feature, rng, train=True)
        zl, l_soft = gate_components(gates, feature, LOWER, rng, train=True)
        zh, h_soft = gate_components(gates, feature, HIGHER, rng, train=True)
        dl = branch_fn(adapter.lower, x, zl, True)
        dh = branch_fn(adapter.higher, x, zh, True)
        complement = ag.sub(np.ones(1), zs)
        delta = ag.add(ag.smul(complement, dl), ag.smul(zs, dh))
        decision = _train_decision(float(zs.value[0]), zl.value, l_soft, zh.value, h_soft, s_soft)
        return delta, decision
    f = ag.value_of(feature)
    zs_bit, s_soft = gate_space(gates, f, train=False)
    use_higher = zs_bit == 1.0
    label = HIGHER if use_higher else LOWER
    bits, soft = gate_components(gates, f, label, train=False)
    delta = branch_fn(adapter.space(label), x, bits, False)
    decision = GateDecision(use_higher=use_higher, space_soft=s_soft)
    if use_higher:
        decision.higher_bits = bits.astype(np.int64)
        decision.higher_soft = soft
    else:
        decision.lower_bits = bits.astype(np.int64)
        decision.lower_soft = soft
    return delta, decision


def _single_delta(adapter: SingleSpaceAdapter, x, feature, rng: SeededRng | None,
                  train: bool, branch_fn):
    use_higher = adapter.label == HIGHER
    if train:
        if rng is None:
            raise UsageError("train-mode gating needs an rng")
        noise = rng.split("components", adapter.label).gumbel(adapter.mlp.out_width)
        logit = adapter.mlp.logits(feature, train=True)
        soft = ag.sigmoid(ag.scalar_mul(1.0 / adapter.tau, ag.add(logit, noise)))
        z = ag.hard_threshold_st(soft)
        delta = branch_fn(adapter.space, x, z, True)
        bits = np.asarray(z.value, dtype=np.int64)
        decision = GateDecision(use_higher=use_higher, space_soft=float(use_higher))
        soft_vals = soft.value.copy()
    else:
        logit = adapter.mlp.logits(ag.value_of(feature), train=False)
        soft_vals = ag.np_sigmoid(logit)
        bits_f = (soft_vals > 0.5).astype(np.float64)
        delta = branch_fn(adapter.space, x, bits_f, False)
        bits = bits_f.astype(np.int64)
        decision = GateDecision(use_higher=use_higher, space_soft=float(use_higher))
    if use_higher:
        decision.higher_bits, decision.higher_soft = bits, soft_vals
    else:
        decision.lower_bits, decision.lower_soft = bits, soft_vals
    return delta, decision


def adapter_forward(w0, adapter: GaraAdapter, x, feature=None,
                    rng: SeededRng | None = None, train: bool = False):
    """Adapted projection of one vector: h = w0 @ x + delta_W @ x.

    `w0` stays a plain array, so it never receives gradient.  The gate
    feature defaults to the input itself; token-level callers pass the
    pooled feature explicitly.
    """
    w0 = check_matrix(w0, "w0")
    if w0.shape != (adapter.out_dim, adapter.in_dim):
        raise ShapeError(
            f"w0 shape {w0.shape} does not match adapter dims ({adapter.out_dim}, {adapter.in_dim})"
        )
    if ag.value_of(x).shape != (adapter.in_dim,):
        raise ShapeError(f"input shape {ag.value_of(x).shape} != ({adapter.in_dim},)")
    if feature is None:
        feature = x
    base = ag.matvec(w0, x)
    delta, decision = _gara_delta(adapter, x, feature, rng, train, _branch_vec)
    return ag.add(base, delta), decision


def delta_tokens(adapter, tokens, rng: SeededRng | None = None, train: bool = False):
    """Adapter update for a (T, K) token matrix; gate feature is the token mean."""
    feature = ag.mean_pool(tokens)
    if isinstance(adapter, GaraAdapter):
        return _gara_delta(adapter, tokens, feature, rng, train, _branch_tokens)
    if isinstance(adapter, SingleSpaceAdapter):
        return _single_delta(adapter, tokens, feature, rng, train, _branch_tokens)
    raise UsageError(f"unsupported adapter type {type(adapter).__name__}")


# ---------------------------------------------------------------------------
# accounting and test plumbing


def param_count(adapter) -> int:
    """Trainable scalars, gate/router networks included."""
    return sum(p.value.size for p in adapter.parameters())


def rank_space_param_count(adapter: GaraAdapter) -> int:
    """Closed form (r_lower + r_higher) * (out_dim + in_dim), checked exact."""
    spaces = [adapter.lower, adapter.higher]
    total = sum(p.value.size for s in spaces for p in s.parameters())
    closed = (adapter.lower.max_rank + adapter.higher.max_rank) * (adapter.out_dim + adapter.in_dim)
    if total != closed:
        raise UsageError(f"rank parameter accounting mismatch: {total} != {closed}")
    return total


def pin_gates(adapter: GaraAdapter, use_higher: bool, magnitude: float = PIN_LOGIT) -> None:
    """Saturate the gates: fixed pool choice, all components of both pools on.

    With the default magnitude the sigmoids hit exactly 0.0/1.0 in f64, so a
    pinned adapter composes with plain-LoRA arithmetic bit for bit.
    """
    adapter.gates.space_mlp.pin_output(magnitude if use_higher else -magnitude)
    adapter.gates.lower_mlp.pin_output(magnitude)
    adapter.gates.higher_mlp.pin_output(magnitude)
