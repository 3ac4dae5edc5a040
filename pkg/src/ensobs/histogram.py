"""Shared bin grids and normalized histograms of scalar samples.

Bins are half-open ``[e_j, e_{j+1})`` except the last one, which is closed.
Bin indices are zero-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DEFAULT_BINS",
    "BinGrid",
    "SampleRangeError",
    "bin_index",
    "bin_indices",
    "histogram",
    "is_prob_vector",
    "shared_grid",
]

DEFAULT_BINS = 50
PAD_FRACTION = 0.01


class SampleRangeError(ValueError):
    """A sample falls outside the grid."""


@dataclass(frozen=True)
class BinGrid:
    edges: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float).ravel()
        if e.size < 2:
            raise ValueError("a grid needs at least two edges")
        if not np.all(np.isfinite(e)) or not np.all(np.diff(e) > 0):
            raise ValueError("grid edges must be finite and strictly increasing")
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    @classmethod
    def uniform(cls, lo: float, hi: float, bins: int) -> "BinGrid":
        if bins < 1:
            raise ValueError("bin count must be >= 1")
        return cls(np.linspace(lo, hi, int(bins) + 1))

    @property
    def bins(self) -> int:
        return self.edges.size - 1

    @property
    def lo(self) -> float:
        return float(self.edges[0])

    @property
    def hi(self) -> float:
        return float(self.edges[-1])

    @property
    def width(self) -> float:
        """Mean bin width (exact for uniform grids)."""
        return (self.hi - self.lo) / self.bins

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


def shared_grid(samples_a, samples_b, bins: int = DEFAULT_BINS) -> BinGrid:
    """Uniform grid over the union of both sample sets, padded by 1% of the range per side.

    A zero range is widened to +-0.5 around the common value.
    """
    a = np.asarray(samples_a, dtype=float).ravel()
    b = np.asarray(samples_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("shared_grid needs two nonempty sample sets")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValueError("samples must be finite")
    span = hi - lo
    pad = PAD_FRACTION * span
    if span <= 0 or not (lo - pad < lo and hi + pad > hi):
        # zero range, or one too small to pad in floating point
        mid = 0.5 * (lo + hi)
        return BinGrid.uniform(mid - 0.5, mid + 0.5, bins)
    edges = np.linspace(lo - pad, hi + pad, int(bins) + 1)
    if np.any(np.diff(edges) <= 0):
        mid = 0.5 * (lo + hi)
        return BinGrid.uniform(mid - 0.5, mid + 0.5, bins)
    return BinGrid(edges)


def bin_indices(samples, grid: BinGrid) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    e = grid.edges
    outside = (x < e[0]) | (x > e[-1]) | ~np.isfinite(x)
    if outside.any():
        bad = x[np.flatnonzero(outside)[0]]
        raise SampleRangeError(f"sample {bad!r} outside grid [{e[0]!r}, {e[-1]!r}]")
    idx = np.searchsorted(e, x, side="right") - 1
    return np.minimum(idx, grid.bins - 1)


def bin_index(value: float, grid: BinGrid) -> int:
    return int(bin_indices([value], grid)[0])


def histogram(samples, grid: BinGrid) -> np.ndarray:
    """Normalized frequencies of ``samples`` on ``grid`` (a probability vector)."""
    idx = bin_indices(samples, grid)
    if idx.size == 0:
        raise ValueError("cannot histogram an empty sample set")
    counts = np.bincount(idx, minlength=grid.bins)
    return counts / idx.size


def is_prob_vector(q, atol: float = 1e-9) -> bool:
    q = np.asarray(q, dtype=float)
    return q.ndim == 1 and q.size >= 1 and bool(np.all(q >= 0)) and abs(q.sum() - 1.0) <= atol
