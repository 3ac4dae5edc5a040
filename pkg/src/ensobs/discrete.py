"""Discrete ensembles: anonymized outputs of N agents.

Scalar outputs make the assignment problem between measured and predicted
outputs trivial: sort both and pair by rank. Each agent's estimate is then
projected orthogonally onto the hyperplane ``<w, x> = y`` of its assigned
measurement, a Kaczmarz step with an unknown, re-estimated row order.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .correction import correction_stream
from .dynamics import DegenerateDirectionError, LinearSystem, ParticleEnsemble, flow_linear
from .estimator import SweepSchedule
from .observer import HorizonBuffer, backward_functional, select_times

__all__ = [
    "AnonymizedSnapshot",
    "DiscreteResult",
    "DiscreteStep",
    "assign_1d",
    "assignment_cost",
    "discrete_estimate",
    "discrete_observe",
    "kaczmarz_project",
    "subsample_snapshots",
    "subsample_tracker",
]


@dataclass(frozen=True)
class AnonymizedSnapshot:
    """One output per agent at ``time``; the agent each output belongs to is unknown."""

    time: float
    outputs: np.ndarray

    def __post_init__(self):
        y = np.array(self.outputs, dtype=float).ravel()
        if y.size < 1 or not np.all(np.isfinite(y)):
            raise ValueError("snapshot outputs must be finite and nonempty")
        y.setflags(write=False)
        object.__setattr__(self, "outputs", y)
        object.__setattr__(self, "time", float(self.time))

    # lets the horizon buffer and time selection treat both snapshot kinds alike
    @property
    def samples(self) -> np.ndarray:
        return self.outputs

    def __len__(self):
        return self.outputs.size


def assign_1d(measured, predicted) -> np.ndarray:
    """Optimal pairing of two equally sized scalar tuples.

    Returns ``sigma_star`` (zero-based) such that ``measured[i]`` is paired with
    ``predicted[sigma_star[i]]``; this minimizes ``sum |measured_i - predicted_sigma(i)|``.
    Ties are broken by original index.
    """
    y = np.asarray(measured, dtype=float).ravel()
    y_hat = np.asarray(predicted, dtype=float).ravel()
    if y.shape != y_hat.shape:
        raise ValueError(f"cannot assign {y.size} measurements to {y_hat.size} predictions")
    sigma = np.argsort(y, kind="stable")
    sigma_hat = np.argsort(y_hat, kind="stable")
    sigma_star = np.empty_like(sigma)
    sigma_star[sigma] = sigma_hat
    return sigma_star


def assignment_cost(measured, predicted, sigma) -> float:
    y = np.asarray(measured, dtype=float)
    y_hat = np.asarray(predicted, dtype=float)
    return float(np.sum(np.abs(y - y_hat[np.asarray(sigma)])))


def kaczmarz_project(x, w, y, relaxation: float = 1.0) -> np.ndarray:
    """Project ``x`` orthogonally onto ``{z : <w, z> = y}``.

    ``x`` may be a single state (n,) with scalar ``y``, or a stack (N, n) with
    ``y`` of shape (N,). ``relaxation`` scales the step (1 = exact projection).
    """
    w = np.asarray(w, dtype=float).ravel()
    nrm2 = float(w @ w)
    if not nrm2 > 0:
        raise DegenerateDirectionError("hyperplane normal is zero")
    x = np.asarray(x, dtype=float)
    r = np.asarray(y, dtype=float) - x @ w
    step = relaxation * r / nrm2
    if x.ndim == 1:
        return x + step * w
    return x + step[:, None] * w[None, :]


def _assign_and_project(x: np.ndarray, w: np.ndarray, measured: np.ndarray, relaxation: float, timer=None):
    predicted = x @ w
    t0 = _time.perf_counter()
    sigma_star = assign_1d(measured, predicted)
    if timer is not None:
        timer[0] += _time.perf_counter() - t0
    target = np.empty_like(predicted)
    target[sigma_star] = measured
    return kaczmarz_project(x, w, target, relaxation), float(np.max(np.abs(target - predicted)))


@dataclass
class DiscreteResult:
    ensemble: ParticleEnsemble
    residuals: list[float] = field(default_factory=list)
    displacements: list[float] = field(default_factory=list)


def discrete_estimate(
    sys: LinearSystem,
    snapshots: Sequence[AnonymizedSnapshot],
    init: ParticleEnsemble,
    schedule: SweepSchedule = SweepSchedule(),
    relaxation: float = 1.0,
    seed: int = 0,
    tol: float = 0.0,
) -> DiscreteResult:
    """Refine initial states of N agents from anonymized output snapshots.

    Each snapshot at ``t_k`` contributes the functional ``w = C exp(A t_k)``
    acting on initial states. Per sweep and snapshot the predicted outputs are
    matched to the measurements by sorting and every agent is projected onto
    its assigned hyperplane. ``residuals`` holds, per sweep, the largest
    output mismatch met during that sweep; iteration stops early once it
    falls to ``tol``.
    """
    snapshots = list(snapshots)
    if not snapshots:
        raise ValueError("no snapshots given")
    if sys.n_outputs != 1:
        raise ValueError("discrete estimation requires a scalar output")
    N = init.size
    for s in snapshots:
        if len(s) != N:
            raise ValueError(f"snapshot at t={s.time} has {len(s)} outputs, expected {N}")
    W = [sys.output_functional(s.time - init.time)[0] for s in snapshots]
    x = np.array(init.particles)
    result = DiscreteResult(init)
    for sweep in range(schedule.sweeps):
        order = list(range(len(snapshots)))
        if schedule.order == "random":
            correction_stream(seed, 0xD15C, sweep).shuffle(order)
        worst = 0.0
        x_prev = x.copy()
        for k in order:
            if not np.any(W[k]):
                continue
            x, r = _assign_and_project(x, W[k], snapshots[k].outputs, relaxation)
            worst = max(worst, r)
        result.residuals.append(worst)
        result.displacements.append(float(np.max(np.abs(x - x_prev))))
        if worst <= tol:
            break
    result.ensemble = init.replace(x)
    return result


@dataclass(frozen=True)
class DiscreteStep:
    time: float
    estimate: ParticleEnsemble
    selected: tuple
    runtime_s: float = 0.0
    sort_s: float = 0.0  # time spent in the sorting assignment


def discrete_observe(
    sys: LinearSystem,
    batches: Iterable[Sequence[AnonymizedSnapshot]],
    init: ParticleEnsemble,
    horizon: float,
    k_times: int,
    dt: float,
    relaxation: float = 1.0,
    seed: int = 0,
    prefill: Sequence[AnonymizedSnapshot] = (),
    uniform_selection: bool = False,
) -> Iterator[DiscreteStep]:
    """Moving-horizon tracking of N agents from anonymized snapshots.

    ``batches[k]`` holds the snapshots that arrive during step ``k``. Each
    step predicts the tracks forward by ``dt``, buffers and evicts snapshots,
    selects ``k_times`` buffered times (angle-weighted, or uniformly when
    ``uniform_selection``) and, for each, assigns and projects the current
    states using the backward functional ``C exp(A (tau - t))``.
    Noisy hyperplanes are used as they are; ``relaxation`` < 1 damps steps.
    """
    N = init.size
    buf = HorizonBuffer(horizon, prefill)
    est = init
    step = 0
    for batch in batches:
        t0 = _time.perf_counter()
        step += 1
        est = flow_linear(sys, est, dt)
        t = est.time
        for s in batch:
            if len(s) != N:
                raise ValueError(f"snapshot at t={s.time} has {len(s)} outputs, expected {N}")
            buf.append(s)
        buf.evict(t)
        selected: list[float] = []
        sort_s = [0.0]
        if len(buf):
            if uniform_selection:
                times = buf.times
                rng = correction_stream(seed, 0xD0B5, step)
                selected = list(rng.choice(times, size=min(k_times, times.size), replace=False))
            else:
                selected = select_times(buf, sys, k_times, seed=seed + step, now=t)
            correction_stream(seed, 0xD0B6, step).shuffle(selected)
            by_time = {s.time: s for s in buf}
            x = np.array(est.particles)
            for tau in selected:
                w = backward_functional(sys, tau, t)
                if not np.any(w):
                    continue
                x, _ = _assign_and_project(x, w, by_time[tau].outputs, relaxation, sort_s)
            est = est.replace(x)
        yield DiscreteStep(t, est, tuple(float(s) for s in selected), _time.perf_counter() - t0, sort_s[0])


def subsample_snapshots(snapshots: Sequence[AnonymizedSnapshot], fraction: float, seed: int = 0):
    """Keep ``ceil(fraction * N)`` outputs of every snapshot (seeded, per snapshot)."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    out = []
    for k, s in enumerate(snapshots):
        n_keep = math.ceil(fraction * len(s))
        if n_keep >= len(s):
            out.append(s)
            continue
        rng = correction_stream(seed, 0x5B5, k)
        idx = np.sort(rng.choice(len(s), size=n_keep, replace=False))
        out.append(AnonymizedSnapshot(s.time, s.outputs[idx]))
    return out


def subsample_tracker(
    sys: LinearSystem,
    batches: Sequence[Sequence[AnonymizedSnapshot]],
    init: ParticleEnsemble,
    fraction: float,
    horizon: float,
    k_times: int,
    dt: float,
    seed: int = 0,
    prefill: Sequence[AnonymizedSnapshot] = (),
    **kwargs,
) -> Iterator[DiscreteStep]:
    """Rough, cheaper tracking on a random subsample of the agents.

    Each snapshot and the initial tracks are reduced to ``ceil(fraction * N)``
    entries, then :func:`discrete_observe` runs on the reduced problem.
    ``fraction = 1`` reproduces the full run.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    n_keep = math.ceil(fraction * init.size)
    if n_keep < init.size:
        rng = correction_stream(seed, 0x5B6)
        idx = np.sort(rng.choice(init.size, size=n_keep, replace=False))
        init = init.replace(init.particles[idx])
    counter = [0]

    def reduce(snaps):
        out = []
        for s in snaps:
            counter[0] += 1
            out.extend(subsample_snapshots([s], fraction, seed=seed + counter[0]))
        return out

    pre = reduce(prefill)
    reduced = [reduce(b) for b in batches]
    return discrete_observe(sys, reduced, init, horizon, k_times, dt, seed=seed, prefill=pre, **kwargs)
