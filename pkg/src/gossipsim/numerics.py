"""Vector arithmetic helpers and keyed deterministic random streams.

Model vectors are plain 1-D float64 numpy arrays. Every public entry point
validates finiteness so NaN/Inf never crosses a module boundary unnoticed.
"""
from __future__ import annotations

import zlib

import numpy as np


def as_vector(values) -> np.ndarray:
    """Coerce to a finite 1-D float64 array, validating the invariants."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"model vector must be 1-D with d >= 1, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("model vector contains non-finite entries")
    return v


def add_scaled(x, alpha: float, y) -> np.ndarray:
    """Return x + alpha * y."""
    x = as_vector(x)
    y = as_vector(y)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return x + float(alpha) * y


def squared_norm(x) -> float:
    """Squared Euclidean norm."""
    x = as_vector(x)
    return float(np.dot(x, x))


def coordinate_stats(vs) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate mean and population standard deviation of a batch.

    All vectors must share one dimension; the list must be nonempty.
    """
    if len(vs) == 0:
        raise ValueError("coordinate_stats requires a nonempty list")
    arr = np.stack([as_vector(v) for v in vs])
    return arr.mean(axis=0), arr.std(axis=0)


def _key_part(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


class RngStream:
    """Deterministic random stream keyed by (seed, id tuple).

    Two streams built from the same seed and id path produce identical
    draws; distinct id paths give statistically independent sequences
    (numpy SeedSequence spawn keys). Streams are cheap immutable handles,
    safe to share across workers.
    """

    __slots__ = ("seed", "stream_id")

    def __init__(self, seed: int, stream_id: tuple = ()):
        self.seed = int(seed)
        self.stream_id = tuple(_key_part(p) for p in stream_id)

    def substream(self, *parts) -> "RngStream":
        """Derive a child stream keyed by additional id parts (ints or tags)."""
        return RngStream(self.seed, self.stream_id + parts)

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream_id)
        return np.random.default_rng(ss)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, RngStream)
            and self.seed == other.seed
            and self.stream_id == other.stream_id
        )

    def __hash__(self) -> int:
        return hash((self.seed, self.stream_id))
