"""How the gates pick a rank budget per input.

Builds one adapter with rank pools of 2 and 8 components, feeds it a
few token bundles, and prints which components each input switches on
-- in train mode (Gumbel noise, straight-through) and in eval mode
(noise-free, deterministic).  Ends with the two sanity anchors: a
fresh adapter does nothing, and a pinned adapter acts like plain LoRA.
Runtime: well under a second.
"""
import numpy as np

from gara.adapter import GaraAdapter, delta_tokens, param_count, pin_gates
from gara.autograd import value_of
from gara.rng import SeededRng

DIM = 16
R_LOWER, R_HIGHER = 2, 8


def describe(tag, decision):
    pool = "higher" if decision.use_higher else "lower"
    print(f"  {tag}: pool={pool:6s} bits={decision.bit_string():9s} "
          f"rank={decision.effective_rank}  p(higher)={decision.space_soft:.3f}")


def main():
    rng = SeededRng(0)
    adapter = GaraAdapter.build(DIM, DIM, R_LOWER, R_HIGHER, 0.5, rng.split("build"))
    print(f"adapter: {DIM}x{DIM}, pools {R_LOWER}+{R_HIGHER}, "
          f"{param_count(adapter)} parameters")

    # fresh adapters are invisible: the up factors start at zero
    tokens = rng.split("tokens").normal(size=(4, DIM))
    delta, _ = delta_tokens(adapter, tokens)
    print(f"fresh adapter max |delta| = {np.max(np.abs(value_of(delta))):.1f} (exact zero)")

    # wake the gates and factors up so the decisions vary across inputs
    jitter = rng.split("jitter")
    for p in adapter.parameters():
        p.value += jitter.split(p.name).normal(scale=0.8, size=p.value.shape)

    print("\neval mode (no noise, same input -> same gates):")
    for i in range(4):
        x = rng.split("input", i).normal(size=(4, DIM))
        _, decision = delta_tokens(adapter, x)
        describe(f"input {i}", decision)

    print("\ntrain mode (Gumbel noise; two draws on input 0):")
    x = rng.split("input", 0).normal(size=(4, DIM))
    for draw in range(2):
        _, decision = delta_tokens(adapter, x, rng=rng.split("noise", draw), train=True)
        describe(f"draw {draw} ", decision)

    # pinned to the lower pool with everything on == plain LoRA
    pin_gates(adapter, use_higher=False)
    lora_update = adapter.lower.up.value @ adapter.lower.down.value
    delta, decision = delta_tokens(adapter, tokens)
    gap = np.max(np.abs(value_of(delta) - tokens @ lora_update.T))
    print(f"\npinned gates: bits={decision.bit_string()}, "
          f"max |delta - lora delta| = {gap:.1e}")


if __name__ == "__main__":
    main()
