"""Dense linear algebra helpers with explicit shape checking.

Thin wrappers over numpy that fail loudly (ShapeError naming both operand
shapes) instead of letting broadcasting hide a wiring bug.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError

DEFAULT_RANK_TOL = 1e-10


def as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def check_matrix(m, name: str = "matrix") -> np.ndarray:
    m = as_f64(m)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-d, got shape {m.shape}")
    return m


def check_vector(v, name: str = "vector") -> np.ndarray:
    v = as_f64(v)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-d, got shape {v.shape}")
    return v


def matmul(a, b) -> np.ndarray:
    a = check_matrix(a, "left operand")
    b = check_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul mismatch: {a.shape} @ {b.shape}")
    return a @ b


def matvec(m, v) -> np.ndarray:
    m = check_matrix(m, "matrix")
    v = check_vector(v, "vector")
    if m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec mismatch: {m.shape} @ {v.shape}")
    return m @ v


def outer(u, v) -> np.ndarray:
    u = check_vector(u, "left vector")
    v = check_vector(v, "right vector")
    return np.outer(u, v)


def numerical_rank(m, tol: float = DEFAULT_RANK_TOL) -> int:
    """Number of singular values above tol relative to the largest one."""
    m = check_matrix(m)
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def ensure_finite(x, context: str = "array") -> np.ndarray:
    x = as_f64(x)
    if not np.all(np.isfinite(x)):
        bad = int(np.sum(~np.isfinite(x)))
        raise FloatingPointError(f"{context} contains {bad} non-finite entries")
    return x
