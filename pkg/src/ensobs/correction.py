"""Randomized per-particle corrections driven by a histogram transport plan.

The estimator's projected histogram is compared with the histogram of the
measured outputs on a shared grid. Each particle then draws a destination
bin from the plan's conditional distribution for its current bin and is
translated along the projection direction to a uniformly random point of
that bin.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .dynamics import Direction, NonlinearSystem, ParticleEnsemble, flow_nonlinear, projection_direction
from .histogram import DEFAULT_BINS, BinGrid, bin_indices, histogram, shared_grid
from .transport import TransportPlan, solve

__all__ = [
    "CorrectionConfig",
    "CorrectionReport",
    "correct_along_direction",
    "correction_stream",
    "unfolded_correct",
]


@dataclass(frozen=True)
class CorrectionConfig:
    bins: int = DEFAULT_BINS
    solver: str = "exact"
    rng_seed: int = 0
    keep_in_bin: bool = True
    sinkhorn_epsilon: float = 0.05
    sinkhorn_max_iters: int = 10_000
    sinkhorn_tol: float = 1e-9

    def __post_init__(self):
        if self.bins < 1:
            raise ValueError("bins must be >= 1")
        if self.solver not in ("exact", "sinkhorn"):
            raise ValueError(f"unknown solver {self.solver!r}")

    def with_seed(self, seed: int) -> "CorrectionConfig":
        return replace(self, rng_seed=int(seed))

    def plan(self, source, target) -> TransportPlan:
        if self.solver == "sinkhorn":
            return solve(
                source,
                target,
                "sinkhorn",
                epsilon=self.sinkhorn_epsilon,
                max_iters=self.sinkhorn_max_iters,
                tol=self.sinkhorn_tol,
            )
        return solve(source, target, "exact")


@dataclass(frozen=True)
class CorrectionReport:
    """What one correction did; ``w1_before`` is in output units."""

    grid: BinGrid
    plan: TransportPlan
    moved: np.ndarray
    w1_before: float

    @property
    def n_moved(self) -> int:
        return int(self.moved.sum())


def correction_stream(seed: int, *counters: int) -> np.random.Generator:
    """Counter-based random stream keyed by ``(seed, *counters)``.

    Draw ``k`` of particle ``i`` is element ``i`` of the ``k``-th length-N
    block, so each particle's randomness depends only on the key and its index.
    """
    key = np.random.SeedSequence([int(seed) & (2**64 - 1), *[int(c) for c in counters]])
    return np.random.Generator(np.random.Philox(key))


def correct_along_direction(
    ens: ParticleEnsemble,
    direction: Direction,
    measured,
    cfg: CorrectionConfig = CorrectionConfig(),
    stream: Sequence[int] = (),
    return_report: bool = False,
):
    """Morph the projected histogram of ``ens`` along ``direction`` into that of ``measured``.

    Parameters
    ----------
    ens : ParticleEnsemble
        Estimator particles.
    direction : Direction
        Unit direction ``v`` and scale ``s``; projections are ``<s v, x>`` so
        they live on the same axis as the raw ``measured`` outputs.
    measured : array_like
        Raw scalar output samples.
    cfg : CorrectionConfig
    stream : sequence of int
        Extra counters (e.g. sweep and step indices) mixed into the random key.
    return_report : bool
        Also return a :class:`CorrectionReport`.
    """
    y = np.asarray(measured, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("measured sample set is empty")
    if ens.dim != direction.v.size:
        raise ValueError("direction and ensemble dimensions differ")
    x = ens.particles
    s = direction.scale
    v = direction.v
    proj = x @ (s * v)

    grid = shared_grid(proj, y, cfg.bins)
    src_bin = bin_indices(proj, grid)
    q_hat = np.bincount(src_bin, minlength=grid.bins) / src_bin.size
    q = histogram(y, grid)
    plan = cfg.plan(q_hat, q)

    N = x.shape[0]
    rng = correction_stream(cfg.rng_seed, *stream)
    u_dest = rng.random(N)
    u_pos = rng.random(N)

    dest = np.empty(N, dtype=np.intp)
    for m in np.unique(src_bin):
        sel = src_bin == m
        col = plan.T[:, m]
        cdf = np.cumsum(col)
        # draw j with probability T[j, m] / sum_j T[j, m]
        j = np.searchsorted(cdf, u_dest[sel] * cdf[-1], side="right")
        dest[sel] = np.minimum(j, grid.bins - 1)

    move = np.ones(N, dtype=bool) if not cfg.keep_in_bin else dest != src_bin
    new_x = np.array(x)
    if move.any():
        e = grid.edges
        d = dest[move]
        target = e[d] + u_pos[move] * (e[d + 1] - e[d])
        shift = (target - proj[move]) / s
        new_x[move] += shift[:, None] * v[None, :]
    out = ens.replace(new_x)
    if return_report:
        w1 = float(np.sum(np.abs(np.cumsum(q_hat - q)[:-1]))) * grid.width
        return out, CorrectionReport(grid, plan, move, w1)
    return out


def unfolded_correct(
    ens0: ParticleEnsemble,
    sys: NonlinearSystem,
    snapshot,
    cfg: CorrectionConfig = CorrectionConfig(),
    stream: Sequence[int] = (),
) -> ParticleEnsemble:
    """Correct an initial-time ensemble against an output snapshot of a nonlinear system.

    The ensemble is flowed to the snapshot time, corrected along the output
    direction there, and flowed back to its original time. The number of
    particles between two propagated level sets of the output is conserved
    by the flow, so no gradients of the output map are needed. Particles the
    correction leaves in place keep their initial state exactly.
    """
    t = float(snapshot.time) - ens0.time
    direction = projection_direction(sys, 0.0)
    forward = flow_nonlinear(sys, ens0, t)
    corrected, report = correct_along_direction(
        forward, direction, snapshot.samples, cfg, stream, return_report=True
    )
    moved = report.moved
    if not moved.any():
        return ens0
    back = flow_nonlinear(sys, ParticleEnsemble(corrected.particles[moved], corrected.time), -t)
    x = np.array(ens0.particles)
    x[moved] = back.particles
    return ens0.replace(x)
