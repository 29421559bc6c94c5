"""Deterministic, splittable random streams.

Streams are backed by numpy's counter-based Philox generator.  A stream is
identified by a 128-bit key derived with SHA-256 from the root seed and the
labels passed to split(), so two processes that build the same split tree
draw bit-identical values no matter in which order the branches are used.
"""
from __future__ import annotations

import hashlib

import numpy as np

# open-interval clamp keeps log(u) and log(-log(u)) finite
_U_LO = 1e-12
_U_HI = 1.0 - 1e-12

_ROOT_TAG = b"gara.rng.root.v1"
_SPLIT_TAG = b"gara.rng.split.v1"


def _encode_label(item) -> bytes:
    """Tagged encoding so split('1') and split(1) name different streams."""
    if isinstance(item, bool):
        raise TypeError("bool split labels are ambiguous; use str or int")
    if isinstance(item, (int, np.integer)):
        return b"i" + int(item).to_bytes(8, "little", signed=True)
    if isinstance(item, str):
        raw = item.encode("utf-8")
        return b"s" + len(raw).to_bytes(4, "little") + raw
    raise TypeError(f"split labels must be str or int, got {type(item).__name__}")


class SeededRng:
    """A named random stream that can be split into independent children."""

    __slots__ = ("seed", "path", "_key", "_gen")

    def __init__(self, seed: int):
        if not isinstance(seed, (int, np.integer)):
            raise TypeError(f"seed must be an int, got {type(seed).__name__}")
        self.seed = int(seed)
        self.path: tuple = ()
        digest = hashlib.sha256(
            _ROOT_TAG + self.seed.to_bytes(8, "little", signed=True)
        ).digest()
        self._key = digest[:16]
        self._gen = _make_generator(self._key)

    @classmethod
    def _from_key(cls, seed: int, path: tuple, key: bytes) -> "SeededRng":
        child = cls.__new__(cls)
        child.seed = seed
        child.path = path
        child._key = key
        child._gen = _make_generator(key)
        return child

    def split(self, *labels) -> "SeededRng":
        """Derive an independent child stream named by the given labels."""
        if not labels:
            raise ValueError("split() needs at least one label")
        h = hashlib.sha256()
        h.update(_SPLIT_TAG)
        h.update(self._key)
        for item in labels:
            h.update(_encode_label(item))
        return SeededRng._from_key(self.seed, self.path + tuple(labels), h.digest()[:16])

    def uniform(self, size=None) -> np.ndarray:
        """Uniform draws clamped into the open interval (0, 1)."""
        return np.clip(self._gen.random(size), _U_LO, _U_HI)

    def gumbel(self, size=None) -> np.ndarray:
        """Standard Gumbel noise computed as -log(-log(U))."""
        return -np.log(-np.log(self.uniform(size)))

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(size) * scale

    def integers(self, low: int, high: int | None = None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, path={self.path!r})"


def _make_generator(key: bytes) -> np.random.Generator:
    words = np.frombuffer(key, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=words))


def gumbel_from_uniform(u) -> np.ndarray:
    """Deterministic Gumbel transform of already-drawn uniforms."""
    u = np.clip(np.asarray(u, dtype=np.float64), _U_LO, _U_HI)
    return -np.log(-np.log(u))
