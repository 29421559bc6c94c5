"""Fixed-rank LoRA and mixture-of-experts LoRA baselines."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Parameter
from .errors import ConfigError, ShapeError, UsageError
from .linalg import check_matrix
from .nn import Mlp
from .rng import SeededRng


class LoraAdapter:
    """Plain low-rank update: delta_W = up @ down, rank fixed."""

    def __init__(self, down: Parameter, up: Parameter):
        if down.value.ndim != 2 or up.value.ndim != 2:
            raise ShapeError("lora factors must be 2-d")
        if down.value.shape[0] != up.value.shape[1]:
            raise ShapeError(
                f"rank mismatch: down {down.value.shape} vs up {up.value.shape}"
            )
        self.down = down  # (R, K)
        self.up = up      # (D, R)

    @property
    def rank(self) -> int:
        return self.down.value.shape[0]

    @property
    def in_dim(self) -> int:
        return self.down.value.shape[1]

    @property
    def out_dim(self) -> int:
        return self.up.value.shape[0]

    @classmethod
    def build(cls, out_dim: int, in_dim: int, rank: int, rng: SeededRng,
              name: str = "lora") -> "LoraAdapter":
        if rank < 1:
            raise ConfigError(f"rank must be >= 1, got {rank}")
        if rank > min(out_dim, in_dim):
            raise ConfigError(f"rank {rank} exceeds min(D, K) = {min(out_dim, in_dim)}")
        down = rng.split(name, "down").normal(size=(rank, in_dim), scale=1.0 / np.sqrt(in_dim))
        up = np.zeros((out_dim, rank))
        return cls(Parameter(down, f"{name}.down"), Parameter(up, f"{name}.up"))

    def parameters(self) -> list[Parameter]:
        return [self.down, self.up]


def lora_delta(adapter: LoraAdapter) -> np.ndarray:
    """Materialized (D, K) update."""
    return adapter.up.value @ adapter.down.value


def lora_forward(w0, adapter: LoraAdapter, x, train: bool = False):
    """h = w0 @ x + up @ (down @ x); w0 stays frozen."""
    w0 = check_matrix(w0, "w0")
    if w0.shape != (adapter.out_dim, adapter.in_dim):
        raise ShapeError(f"w0 shape {w0.shape} != ({adapter.out_dim}, {adapter.in_dim})")
    down = adapter.down if train else adapter.down.value
    up = adapter.up if train else adapter.up.value
    return ag.add(ag.matvec(w0, x), ag.matvec(up, ag.matvec(down, x)))


def lora_delta_tokens(adapter: LoraAdapter, tokens, train: bool = False):
    """Update for a (T, K) token matrix -> (T, D)."""
    down = adapter.down if train else adapter.down.value
    up = adapter.up if train else adapter.up.value
    return ag.matmul(ag.matmul(tokens, ag.transpose(down)), ag.transpose(up))


# ---------------------------------------------------------------------------
# mixture of experts


@dataclass
class ExpertChoice:
    """Routing telemetry: which expert fired and the (soft) routing weights."""

    chosen: int
    rank: int
    weights: np.ndarray

    @property
    def effective_rank(self) -> int:
        return self.rank


class MoeLoraAdapter:
    """Bank of LoRA experts; a router picks exactly one per input."""

    def __init__(self, experts: list[LoraAdapter], router: Mlp, tau: float):
        if not experts:
            raise ConfigError("MoE adapter needs at least one expert")
        dims = {(e.out_dim, e.in_dim) for e in experts}
        if len(dims) != 1:
            raise ShapeError(f"experts disagree on dims: {sorted(dims)}")
        if router.out_width != len(experts):
            raise ConfigError(
                f"router emits {router.out_width} logits for {len(experts)} experts"
            )
        if tau <= 0:
            raise ConfigError(f"tau must be > 0, got {tau}")
        self.experts = experts
        self.router = router
        self.tau = float(tau)

    @property
    def in_dim(self) -> int:
        return self.experts[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.experts[0].out_dim

    @property
    def ranks(self) -> list[int]:
        return [e.rank for e in self.experts]

    @classmethod
    def build(cls, out_dim: int, in_dim: int, ranks: list[int], tau: float,
              rng: SeededRng, name: str = "moe") -> "MoeLoraAdapter":
        if not ranks:
            raise ConfigError("MoE adapter needs at least one expert rank")
        experts = [
            LoraAdapter.build(out_dim, in_dim, r, rng.split(name, "expert", i), f"{name}.expert{i}")
            for i, r in enumerate(ranks)
        ]
        hidden = max(in_dim // 4, 1)
        router = Mlp([in_dim, hidden, len(ranks)], rng.split(name, "router"), f"{name}.router")
        return cls(experts, router, tau)

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for e in self.experts:
            out.extend(e.parameters())
        out.extend(self.router.parameters())
        return out


def route(adapter: MoeLoraAdapter, feature, rng: SeededRng | None = None,
          train: bool = False):
    """Router decision.

    Train: Gumbel-softmax with a straight-through argmax (one-hot forward,
    softmax gradients).  Eval: plain argmax of the router logits, no noise,
    no tape.  Returns (one-hot-or-index, weights).
    """
    if train:
        if rng is None:
            raise UsageError("train-mode routing needs an rng")
        noise = rng.split("router").gumbel(len(adapter.experts))
        logits = adapter.router.logits(feature, train=True)
        soft = ag.softmax(ag.scalar_mul(1.0 / adapter.tau, ag.add(logits, noise)))
        onehot = ag.hard_argmax_st(soft)
        return onehot, soft.value.copy()
    logits = adapter.router.logits(ag.value_of(feature), train=False)
    weights = ag.np_softmax(logits)
    return int(np.argmax(logits)), weights


def moe_delta_tokens(adapter: MoeLoraAdapter, tokens, rng: SeededRng | None = None,
                     train: bool = False):
    """Mixture update for a (T, K) token matrix -> (T, D)."""
    feature = ag.mean_pool(tokens)
    if train:
        onehot, weights = route(adapter, feature, rng, train=True)
        total = None
        for i, expert in enumerate(adapter.experts):
            term = ag.smul(ag.take(onehot, i), lora_delta_tokens(expert, tokens, train=True))
            total = term if total is None else ag.add(total, term)
        chosen = int(np.argmax(onehot.value))
        return total, ExpertChoice(chosen, adapter.experts[chosen].rank, weights)
    chosen, weights = route(adapter, feature, train=False)
    delta = lora_delta_tokens(adapter.experts[chosen], tokens, train=False)
    return delta, ExpertChoice(chosen, adapter.experts[chosen].rank, weights)


def moe_forward(w0, adapter: MoeLoraAdapter, x, feature=None,
                rng: SeededRng | None = None, train: bool = False):
    """Adapted projection of one vector; exactly one expert acts in the value."""
    w0 = check_matrix(w0, "w0")
    if w0.shape != (adapter.out_dim, adapter.in_dim):
        raise ShapeError(f"w0 shape {w0.shape} != ({adapter.out_dim}, {adapter.in_dim})")
    if feature is None:
        feature = x
    base = ag.matvec(w0, x)
    if train:
        onehot, weights = route(adapter, feature, rng, train=True)
        total = None
        for i, expert in enumerate(adapter.experts):
            down, up = expert.down, expert.up
            term = ag.smul(ag.take(onehot, i), ag.matvec(up, ag.matvec(down, x)))
            total = term if total is None else ag.add(total, term)
        chosen = int(np.argmax(onehot.value))
        return ag.add(base, total), chosen
    chosen, _ = route(adapter, feature, train=False)
    expert = adapter.experts[chosen]
    delta = ag.matvec(expert.up.value, ag.matvec(expert.down.value, ag.value_of(x)))
    return ag.add(base, delta), chosen
