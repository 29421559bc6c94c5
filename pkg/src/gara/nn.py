"""Small fully-connected networks used for gates and routers."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Parameter
from .errors import ConfigError
from .rng import SeededRng


class Mlp:
    """Dense stack over 1-d features: hidden layers ReLU, linear output.

    Weights are N(0, 1/fan_in) scaled; biases start at zero except the final
    bias, which can be offset so the network's output starts at a chosen
    logit.
    """

    def __init__(self, widths: list[int], rng: SeededRng, name: str, final_bias: float = 0.0):
        if len(widths) < 2:
            raise ConfigError(f"mlp {name!r} needs at least input and output widths, got {widths}")
        if any(w < 1 for w in widths):
            raise ConfigError(f"mlp {name!r} widths must be >= 1, got {widths}")
        self.name = name
        self.widths = list(widths)
        self.weights: list[Parameter] = []
        self.biases: list[Parameter] = []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            w = rng.split("w", i).normal(size=(fan_out, fan_in), scale=1.0 / np.sqrt(fan_in))
            b = np.zeros(fan_out)
            if i == len(widths) - 2:
                b = b + final_bias
            self.weights.append(Parameter(w, f"{name}.w{i}"))
            self.biases.append(Parameter(b, f"{name}.b{i}"))

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def out_width(self) -> int:
        return self.widths[-1]

    def logits(self, x, train: bool):
        """Forward to the final linear layer; no output nonlinearity.

        With train=False the weights enter as plain arrays, so a plain-array
        input stays entirely in numpy and builds no tape.
        """
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            wv = w if train else w.value
            bv = b if train else b.value
            h = ag.add(ag.matvec(wv, h), bv)
            if i < last:
                h = ag.relu(h)
        return h

    def parameters(self) -> list[Parameter]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def param_count(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def flatten(self) -> np.ndarray:
        """All weights and biases concatenated in layer order."""
        return np.concatenate([p.value.ravel() for p in self.parameters()])

    def load_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.param_count():
            raise ConfigError(
                f"mlp {self.name!r} expects {self.param_count()} values, got {flat.size}"
            )
        offset = 0
        for p in self.parameters():
            n = p.value.size
            p.value[...] = flat[offset : offset + n].reshape(p.value.shape)
            offset += n

    def pin_output(self, logit: float) -> None:
        """Zero every weight and bias, then fix the final bias to a constant.

        The network then emits the same logit for every input; with a large
        magnitude the downstream sigmoid saturates to exactly 0.0 or 1.0 in
        f64, which is how tests pin gate decisions.
        """
        for p in self.parameters():
            p.value[...] = 0.0
        self.biases[-1].value[...] = logit
