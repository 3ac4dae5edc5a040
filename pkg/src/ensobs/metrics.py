"""Distances between sample sets and particle ensembles."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .correction import correction_stream
from .dynamics import ParticleEnsemble
from .histogram import DEFAULT_BINS, histogram, shared_grid

__all__ = [
    "MetricReport",
    "SampleSizeWarning",
    "random_directions",
    "sliced_w1",
    "tv_on_grid",
    "w1_samples_1d",
]


class SampleSizeWarning(RuntimeWarning):
    """Sample sets of different size were compared after subsampling."""


@dataclass(frozen=True)
class MetricReport:
    name: str
    value: float
    details: dict

    def __post_init__(self):
        if not (np.isfinite(self.value) and self.value >= 0):
            raise ValueError(f"metric {self.name!r} has invalid value {self.value!r}")


def w1_samples_1d(a, b, strict: bool = False, seed: int = 0) -> float:
    """Empirical W1 between two equally sized scalar samples via sorted matching.

    If the sizes differ the larger set is subsampled (seeded, without
    replacement) to the smaller size and a :class:`SampleSizeWarning` is
    issued; with ``strict=True`` a ValueError is raised instead.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be nonempty")
    if a.size != b.size:
        if strict:
            raise ValueError(f"sample sizes differ: {a.size} vs {b.size}")
        warnings.warn(
            f"subsampling {max(a.size, b.size)} samples to {min(a.size, b.size)}",
            SampleSizeWarning,
            stacklevel=2,
        )
        rng = correction_stream(seed, 0x3E7)
        if a.size > b.size:
            a = a[rng.choice(a.size, size=b.size, replace=False)]
        else:
            b = b[rng.choice(b.size, size=a.size, replace=False)]
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


def random_directions(dim: int, n_dirs: int, seed: int = 0) -> np.ndarray:
    """``n_dirs`` unit vectors drawn uniformly from the sphere in ``dim`` dimensions."""
    rng = correction_stream(seed, 0x51D)
    V = rng.standard_normal((int(n_dirs), int(dim)))
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def sliced_w1(ens_a, ens_b, n_dirs: int = 200, seed: int = 0) -> float:
    """Average of the 1D W1 over ``n_dirs`` seeded uniform directions.

    Accepts :class:`ParticleEnsemble` objects or plain (N, n) arrays.
    """
    xa = ens_a.particles if isinstance(ens_a, ParticleEnsemble) else np.atleast_2d(np.asarray(ens_a, dtype=float))
    xb = ens_b.particles if isinstance(ens_b, ParticleEnsemble) else np.atleast_2d(np.asarray(ens_b, dtype=float))
    if xa.shape[1] != xb.shape[1]:
        raise ValueError("ensembles differ in dimension")
    if n_dirs < 1:
        raise ValueError("n_dirs must be >= 1")
    V = random_directions(xa.shape[1], n_dirs, seed)
    pa = xa @ V.T
    pb = xb @ V.T
    if pa.shape[0] != pb.shape[0]:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SampleSizeWarning)
            vals = [w1_samples_1d(pa[:, k], pb[:, k], seed=seed) for k in range(V.shape[0])]
        return float(np.mean(vals))
    return float(np.mean(np.abs(np.sort(pa, axis=0) - np.sort(pb, axis=0))))


def tv_on_grid(a, b, bins: int = DEFAULT_BINS) -> float:
    """Total variation between the histograms of ``a`` and ``b`` on their shared grid."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be nonempty")
    grid = shared_grid(a, b, bins)
    return 0.5 * float(np.sum(np.abs(histogram(a, grid) - histogram(b, grid))))
