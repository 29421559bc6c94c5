"""Minimal reverse-mode autodiff over numpy arrays.

Every Node carries two arrays: `value`, the forward result actually used
downstream, and `relaxed`, a shadow result in which no hard threshold was
ever applied.  For graphs without hard_threshold_st the two are the same
object, so nothing is computed twice.  Backward propagates vector-Jacobian
products evaluated at the *relaxed* values.  The consequence is the
straight-through estimator in its exact form: the forward pass commits to
binary gate decisions while the gradient is the true gradient of the fully
soft relaxation, so finite differences of the relaxed forward match the
analytic gradients to first order for every leaf, including parameters that
only influence the loss through a thresholded gate.

Primitives accept Node or plain array arguments.  If no argument is a Node
the computation stays in plain numpy and returns an ndarray, which is what
evaluation-mode code paths rely on: no tape is built unless a trainable
Parameter is involved.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError, UsageError
from .linalg import as_f64


class Node:
    """One value in the computation graph."""

    __slots__ = ("value", "relaxed", "grad", "parents", "_vjp", "requires_grad")

    def __init__(self, value, relaxed=None, parents=(), vjp=None, requires_grad=False):
        self.value = as_f64(value)
        self.relaxed = self.value if relaxed is None else as_f64(relaxed)
        self.grad = None
        self.parents = parents
        self._vjp = vjp
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad})"


class Parameter(Node):
    """A named trainable leaf."""

    __slots__ = ("name",)

    def __init__(self, value, name: str):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else as_f64(x)


def _any_node(*xs) -> bool:
    return any(isinstance(x, Node) for x in xs)


def _lift(np_fn, operands, make_vjp):
    """Build a Node by applying np_fn to values and, if needed, to relaxed values."""
    nodes = [as_node(x) for x in operands]
    value = np_fn(*[n.value for n in nodes])
    if all(n.relaxed is n.value for n in nodes):
        relaxed = value
    else:
        relaxed = np_fn(*[n.relaxed for n in nodes])
    return Node(value, relaxed, tuple(nodes), make_vjp(nodes))


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _np_same_shape(op: str):
    def fn(a, b):
        if a.shape != b.shape:
            raise ShapeError(f"{op} mismatch: {a.shape} vs {b.shape}")
        return a + b if op == "add" else a - b if op == "sub" else a * b

    return fn


_np_add = _np_same_shape("add")
_np_sub = _np_same_shape("sub")
_np_mul = _np_same_shape("mul")


def add(a, b):
    if not _any_node(a, b):
        return _np_add(as_f64(a), as_f64(b))
    return _lift(_np_add, (a, b), lambda ns: lambda g: (g, g))


def sub(a, b):
    if not _any_node(a, b):
        return _np_sub(as_f64(a), as_f64(b))
    return _lift(_np_sub, (a, b), lambda ns: lambda g: (g, -g))


def mul(a, b):
    if not _any_node(a, b):
        return _np_mul(as_f64(a), as_f64(b))
    return _lift(
        _np_mul,
        (a, b),
        lambda ns: lambda g: (g * ns[1].relaxed, g * ns[0].relaxed),
    )


def scalar_mul(c: float, a):
    """Multiply by a plain python constant (not a graph value)."""
    c = float(c)
    if not _any_node(a):
        return c * as_f64(a)
    return _lift(lambda x: c * x, (a,), lambda ns: lambda g: (c * g,))


def _scalar_value(s: np.ndarray, op: str) -> np.ndarray:
    if s.shape not in ((), (1,)):
        raise ShapeError(f"{op} scalar operand must have shape () or (1,), got {s.shape}")
    return s.reshape(())


def smul(s, a):
    """Multiply a tensor by a scalar graph value (shape () or (1,))."""
    if not _any_node(s, a):
        return _scalar_value(as_f64(s), "smul") * as_f64(a)

    def np_fn(sv, av):
        return _scalar_value(sv, "smul") * av

    def make_vjp(ns):
        def vjp(g):
            ds = np.sum(g * ns[1].relaxed).reshape(ns[0].value.shape)
            return ds, _scalar_value(ns[0].relaxed, "smul") * g

        return vjp

    return _lift(np_fn, (s, a), make_vjp)


def sadd(s, a):
    """Add a scalar graph value (shape () or (1,)) to every tensor entry."""
    if not _any_node(s, a):
        return _scalar_value(as_f64(s), "sadd") + as_f64(a)

    def np_fn(sv, av):
        return _scalar_value(sv, "sadd") + av

    def make_vjp(ns):
        def vjp(g):
            return np.sum(g).reshape(ns[0].value.shape), g

        return vjp

    return _lift(np_fn, (s, a), make_vjp)


# ---------------------------------------------------------------------------
# linear algebra


def _np_matmul(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul mismatch: {a.shape} @ {b.shape}")
    return a @ b


def matmul(a, b):
    if not _any_node(a, b):
        return _np_matmul(as_f64(a), as_f64(b))
    return _lift(
        _np_matmul,
        (a, b),
        lambda ns: lambda g: (g @ ns[1].relaxed.T, ns[0].relaxed.T @ g),
    )


def _np_matvec(m, v):
    if m.ndim != 2 or v.ndim != 1:
        raise ShapeError(f"matvec needs (2-d, 1-d), got {m.shape} and {v.shape}")
    if m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec mismatch: {m.shape} @ {v.shape}")
    return m @ v


def matvec(m, v):
    if not _any_node(m, v):
        return _np_matvec(as_f64(m), as_f64(v))
    return _lift(
        _np_matvec,
        (m, v),
        lambda ns: lambda g: (np.outer(g, ns[1].relaxed), ns[0].relaxed.T @ g),
    )


def _np_outer(u, v):
    if u.ndim != 1 or v.ndim != 1:
        raise ShapeError(f"outer needs 1-d operands, got {u.shape} and {v.shape}")
    return np.outer(u, v)


def outer(u, v):
    if not _any_node(u, v):
        return _np_outer(as_f64(u), as_f64(v))
    return _lift(
        _np_outer,
        (u, v),
        lambda ns: lambda g: (g @ ns[1].relaxed, g.T @ ns[0].relaxed),
    )


def _np_transpose(a):
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a 2-d operand, got {a.shape}")
    return a.T


def transpose(a):
    if not _any_node(a):
        return _np_transpose(as_f64(a))
    return _lift(_np_transpose, (a,), lambda ns: lambda g: (g.T,))


def _np_add_rowvec(m, v):
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"add_rowvec mismatch: {m.shape} + {v.shape}")
    return m + v[None, :]


def add_rowvec(m, v):
    """Add a vector to every row of a matrix."""
    if not _any_node(m, v):
        return _np_add_rowvec(as_f64(m), as_f64(v))
    return _lift(
        _np_add_rowvec, (m, v), lambda ns: lambda g: (g, g.sum(axis=0))
    )


def _np_scale_cols(m, z):
    if m.ndim != 2 or z.ndim != 1 or m.shape[1] != z.shape[0]:
        raise ShapeError(f"scale_cols mismatch: {m.shape} * {z.shape}")
    return m * z[None, :]


def scale_cols(m, z):
    """Scale column j of a matrix by z[j]."""
    if not _any_node(m, z):
        return _np_scale_cols(as_f64(m), as_f64(z))
    return _lift(
        _np_scale_cols,
        (m, z),
        lambda ns: lambda g: (
            g * ns[1].relaxed[None, :],
            (g * ns[0].relaxed).sum(axis=0),
        ),
    )


def _np_mean_pool(m):
    if m.ndim != 2:
        raise ShapeError(f"mean_pool needs a 2-d operand, got {m.shape}")
    return m.mean(axis=0)


def mean_pool(m):
    """Mean over rows: (T, K) -> (K,)."""
    if not _any_node(m):
        return _np_mean_pool(as_f64(m))

    def make_vjp(ns):
        rows = ns[0].value.shape[0]

        def vjp(g):
            return (np.repeat(g[None, :] / rows, rows, axis=0),)

        return vjp

    return _lift(_np_mean_pool, (m,), make_vjp)


# ---------------------------------------------------------------------------
# nonlinearities


def np_sigmoid(x) -> np.ndarray:
    """Numerically stable logistic function (exact 0.0/1.0 at saturation)."""
    x = as_f64(x)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a):
    if not _any_node(a):
        return np_sigmoid(a)

    node = as_node(a)
    value = np_sigmoid(node.value)
    relaxed = value if node.relaxed is node.value else np_sigmoid(node.relaxed)

    def vjp(g):
        return (g * relaxed * (1.0 - relaxed),)

    return Node(value, relaxed, (node,), vjp)


def relu(a):
    if not _any_node(a):
        return np.maximum(as_f64(a), 0.0)

    node = as_node(a)
    value = np.maximum(node.value, 0.0)
    relaxed = value if node.relaxed is node.value else np.maximum(node.relaxed, 0.0)

    def vjp(g):
        # subgradient at 0 taken as 0
        return (g * (node.relaxed > 0.0),)

    return Node(value, relaxed, (node,), vjp)


def np_softmax(v) -> np.ndarray:
    v = as_f64(v)
    if v.ndim != 1:
        raise ShapeError(f"softmax needs a 1-d operand, got {v.shape}")
    shifted = v - v.max()
    e = np.exp(shifted)
    return e / e.sum()


def softmax(a):
    if not _any_node(a):
        return np_softmax(a)

    node = as_node(a)
    value = np_softmax(node.value)
    relaxed = value if node.relaxed is node.value else np_softmax(node.relaxed)

    def vjp(g):
        return (relaxed * (g - np.dot(g, relaxed)),)

    return Node(value, relaxed, (node,), vjp)


# ---------------------------------------------------------------------------
# straight-through threshold


def hard_threshold_st(soft, threshold: float = 0.5):
    """Binarize with identity backward.

    Forward commits to 1.0 where the soft value is strictly above the
    threshold (exactly at the threshold resolves to 0.0).  The relaxed shadow
    keeps the soft values, and the vector-Jacobian product is the identity,
    so gradients flow as if the threshold were not there.
    """
    if not _any_node(soft):
        return (as_f64(soft) > threshold).astype(np.float64)

    node = as_node(soft)
    value = (node.value > threshold).astype(np.float64)

    def vjp(g):
        return (g,)

    return Node(value, node.relaxed, (node,), vjp)


def hard_argmax_st(soft):
    """One-hot at the argmax with identity backward (1-d input).

    Forward commits to a single winner (first index on ties); the relaxed
    shadow keeps the soft weights, so gradients reach every entry.
    """
    if not _any_node(soft):
        v = as_f64(soft)
        if v.ndim != 1:
            raise ShapeError(f"hard_argmax_st needs a 1-d operand, got {v.shape}")
        out = np.zeros_like(v)
        out[int(np.argmax(v))] = 1.0
        return out

    node = as_node(soft)
    if node.value.ndim != 1:
        raise ShapeError(f"hard_argmax_st needs a 1-d operand, got {node.value.shape}")
    value = np.zeros_like(node.value)
    value[int(np.argmax(node.value))] = 1.0

    def vjp(g):
        return (g,)

    return Node(value, node.relaxed, (node,), vjp)


def take(v, index: int):
    """Pick one entry of a 1-d vector as a scalar."""
    index = int(index)

    def np_fn(arr):
        if arr.ndim != 1:
            raise ShapeError(f"take needs a 1-d operand, got {arr.shape}")
        if not 0 <= index < arr.shape[0]:
            raise ShapeError(f"take index {index} out of range for length {arr.shape[0]}")
        return arr[index]

    if not _any_node(v):
        return np_fn(as_f64(v))

    def make_vjp(ns):
        def vjp(g):
            out = np.zeros_like(ns[0].value)
            out[index] = g
            return (out,)

        return vjp

    return _lift(np_fn, (v,), make_vjp)


# ---------------------------------------------------------------------------
# losses


def _check_loss_operands(logits: np.ndarray, targets: np.ndarray, op: str):
    if logits.shape != targets.shape:
        raise ShapeError(f"{op} mismatch: logits {logits.shape} vs targets {targets.shape}")
    if logits.size == 0:
        raise ShapeError(f"{op} got empty operands")


def _np_bce(logits, targets):
    _check_loss_operands(logits, targets, "bce_loss")
    # log(1 + exp(-|l|)) + max(l, 0) - l*t, the usual overflow-free form
    per = np.log1p(np.exp(-np.abs(logits))) + np.maximum(logits, 0.0) - logits * targets
    return np.asarray(per.mean())


def bce_loss(logits, targets):
    """Mean binary cross-entropy on logits; targets are plain arrays in [0, 1]."""
    targets = as_f64(targets)
    if not _any_node(logits):
        return _np_bce(as_f64(logits), targets)

    node = as_node(logits)
    value = _np_bce(node.value, targets)
    relaxed = value if node.relaxed is node.value else _np_bce(node.relaxed, targets)
    n = node.value.size

    def vjp(g):
        return (float(g) * (np_sigmoid(node.relaxed) - targets) / n,)

    return Node(value, relaxed, (node,), vjp)


DICE_EPS = 1.0


def _np_dice(logits, targets):
    _check_loss_operands(logits, targets, "dice_loss")
    p = np_sigmoid(logits)
    num = 2.0 * np.sum(p * targets) + DICE_EPS
    den = np.sum(p) + np.sum(targets) + DICE_EPS
    return np.asarray(1.0 - num / den)


def dice_loss(logits, targets):
    """Soft Dice loss on logits with additive smoothing of 1."""
    targets = as_f64(targets)
    if not _any_node(logits):
        return _np_dice(as_f64(logits), targets)

    node = as_node(logits)
    value = _np_dice(node.value, targets)
    relaxed = value if node.relaxed is node.value else _np_dice(node.relaxed, targets)

    def vjp(g):
        p = np_sigmoid(node.relaxed)
        num = 2.0 * np.sum(p * targets) + DICE_EPS
        den = np.sum(p) + np.sum(targets) + DICE_EPS
        ddice_dp = (2.0 * targets * den - num) / (den * den)
        return (float(g) * (-ddice_dp) * p * (1.0 - p),)

    return Node(value, relaxed, (node,), vjp)


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root: Node) -> list:
    """Post-order over the requires_grad subgraph, parents before children."""
    order: list = []
    seen: set = set()
    stack: list = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> dict:
    """Accumulate dLoss/dLeaf for every reachable Parameter.

    Returns a mapping from Parameter to its gradient array; each visited
    node's .grad is reset first, so repeated calls do not leak across steps.
    Gradient contributions from shared nodes accumulate additively.
    """
    if not isinstance(loss, Node):
        raise UsageError("backward expects a Node; got a plain array (no tape was built)")
    if loss.value.shape != ():
        raise UsageError(f"backward expects a scalar loss, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return {}

    order = _toposort(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones(())

    grads: dict = {}
    for node in reversed(order):
        if node.grad is None:
            continue
        if node._vjp is not None:
            parent_grads = node._vjp(node.grad)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                parent.grad = pg if parent.grad is None else parent.grad + pg
        if isinstance(node, Parameter):
            grads[node] = node.grad
    return grads
