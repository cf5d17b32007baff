"""Top-k magnitude selection over flat activation chunks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .floatbits import Precision, nonfinite_mask

__all__ = [
    "ActivationChunk",
    "TopKSketch",
    "MismatchStats",
    "top_k",
    "index_set_mismatch",
]


@dataclass(frozen=True)
class ActivationChunk:
    """A token_count x hidden_dim activation tensor, flattened row-major.

    values[token * hidden_dim + feature] holds the raw pattern of that
    element in the chunk's precision. The flat position is the identity the
    commitment pipeline works with.
    """

    token_count: int
    hidden_dim: int
    precision: Precision
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.token_count < 1 or self.hidden_dim < 1:
            raise ValueError("token_count and hidden_dim must be positive")
        if self.values.dtype != self.precision.pattern_dtype:
            raise ValueError(
                f"values dtype {self.values.dtype} does not match "
                f"{self.precision.value} patterns"
            )
        if self.values.ndim != 1 or self.values.size != self.token_count * self.hidden_dim:
            raise ValueError(
                f"expected {self.token_count * self.hidden_dim} flat values, "
                f"got shape {self.values.shape}"
            )

    @property
    def size(self) -> int:
        return self.values.size

    def slice_tokens(self, start: int, stop: int) -> "ActivationChunk":
        """Sub-chunk covering token rows [start, stop)."""
        if not 0 <= start < stop <= self.token_count:
            raise ValueError(f"bad token slice [{start}, {stop})")
        rows = self.values.reshape(self.token_count, self.hidden_dim)[start:stop]
        return ActivationChunk(stop - start, self.hidden_dim, self.precision, rows.ravel())


@dataclass(frozen=True)
class TopKSketch:
    """k flat indices and their patterns, ordered by non-increasing magnitude.

    Ties in magnitude break toward the lower flat index, so the sketch of a
    chunk is a pure function of its bytes.
    """

    k: int
    indices: np.ndarray
    patterns: np.ndarray
    precision: Precision


class MismatchStats(NamedTuple):
    count: int
    ratio: float


def _magnitude_key(chunk: ActivationChunk) -> np.ndarray:
    # Finite IEEE patterns with the sign bit cleared order exactly like their
    # absolute values, so integer comparison stands in for float comparison.
    sign_bit = 1 << chunk.precision.sign_shift
    return (chunk.values & (sign_bit - 1)).astype(np.uint64)


def top_k(chunk: ActivationChunk, k: int) -> TopKSketch:
    """Select the k largest-magnitude elements of the chunk.

    Raises ValueError when k is out of range or the chunk holds a non-finite
    pattern (the error names the first offending flat index).
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if k > chunk.size:
        raise ValueError(f"k={k} exceeds chunk size {chunk.size}")
    bad = nonfinite_mask(chunk.values, chunk.precision)
    if bad.any():
        raise ValueError(f"non-finite element at flat index {int(bad.argmax())}")

    n = chunk.size
    mag = _magnitude_key(chunk)
    # Composite sort key: magnitude in the high lanes, bit-inverted position in
    # the low lanes. Descending order then yields magnitude desc, index asc,
    # and every key is distinct.
    key = (mag << np.uint64(32)) | (np.uint64(0xFFFFFFFF) - np.arange(n, dtype=np.uint64))
    if k < n:
        cand = np.argpartition(key, n - k)[n - k :]
    else:
        cand = np.arange(n)
    order = np.argsort(key[cand])[::-1]
    sel = cand[order]
    return TopKSketch(
        k=k,
        indices=sel.astype(np.int64),
        patterns=chunk.values[sel],
        precision=chunk.precision,
    )


def index_set_mismatch(a: TopKSketch, b: TopKSketch) -> MismatchStats:
    """How many of a's indices are missing from b, as count and fraction of k."""
    if a.k != b.k:
        raise ValueError(f"sketch sizes differ: {a.k} vs {b.k}")
    shared = np.intersect1d(a.indices, b.indices, assume_unique=True).size
    count = a.k - int(shared)
    return MismatchStats(count=count, ratio=count / a.k)
