"""Moving-horizon ensemble observer.

The observer keeps a particle estimate of the *current* state distribution.
Each step predicts the particles forward, buffers the incoming snapshots,
and corrects the current particles against a subset of buffered snapshots
using the backward functional ``C exp(A (tau - t))``, which maps the state at
time ``t`` to the output at the earlier time ``tau``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .correction import CorrectionConfig, correct_along_direction, correction_stream
from .dynamics import (
    DegenerateDirectionError,
    Direction,
    LinearSystem,
    NonlinearSystem,
    ParticleEnsemble,
    System,
    flow,
    projection_direction,
)
from .estimator import MeasurementSnapshot

__all__ = [
    "HorizonBuffer",
    "ObserverConfig",
    "ObserverState",
    "backward_functional",
    "direction_angles",
    "horizon_for_spread",
    "observer_step",
    "run_observer",
    "select_times",
]

_TIME_EPS = 1e-9


class HorizonBuffer:
    """Time-ordered snapshots restricted to the window ``[t - horizon, t]``."""

    def __init__(self, horizon: float, snapshots: Iterable = ()):
        if not horizon > 0:
            raise ValueError("horizon must be positive")
        self.horizon = float(horizon)
        self.snapshots: deque = deque()
        for s in snapshots:
            self.append(s)

    def append(self, snap) -> None:
        if self.snapshots and snap.time < self.snapshots[-1].time - _TIME_EPS:
            raise ValueError("snapshots must arrive in time order")
        self.snapshots.append(snap)

    def evict(self, now: float) -> None:
        cutoff = now - self.horizon - _TIME_EPS
        while self.snapshots and self.snapshots[0].time < cutoff:
            self.snapshots.popleft()

    def copy(self) -> "HorizonBuffer":
        return HorizonBuffer(self.horizon, self.snapshots)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    def __len__(self) -> int:
        return len(self.snapshots)

    def __iter__(self):
        return iter(self.snapshots)


@dataclass(frozen=True)
class ObserverConfig:
    k_times: int = 10
    passes: int = 1
    correction: CorrectionConfig = CorrectionConfig()

    def __post_init__(self):
        if self.k_times < 1 or self.passes < 1:
            raise ValueError("k_times and passes must be >= 1")


@dataclass
class ObserverState:
    estimate: ParticleEnsemble
    buffer: HorizonBuffer
    config: ObserverConfig = field(default_factory=ObserverConfig)
    step: int = 0
    last_selected: list = field(default_factory=list)

    @property
    def time(self) -> float:
        return self.estimate.time


def backward_functional(sys: LinearSystem, tau: float, t: float) -> np.ndarray:
    """Row ``C exp(A (tau - t))``: state at ``t`` to output at ``tau``."""
    return sys.output_functional(tau - t)[0]


def direction_angles(functionals: np.ndarray) -> np.ndarray:
    """Cumulative angle swept by a sequence of (unsigned) directions.

    Consecutive directions are compared modulo sign, so the result is the
    arc length of the path in projective space, starting at 0.
    """
    W = np.asarray(functionals, dtype=float)
    V = W / np.linalg.norm(W, axis=1, keepdims=True)
    cos = np.abs(np.sum(V[1:] * V[:-1], axis=1))
    steps = np.arccos(np.clip(cos, 0.0, 1.0))
    return np.concatenate([[0.0], np.cumsum(steps)])


def _angle_weights(angles: np.ndarray) -> np.ndarray:
    """Width of each point's cell in angle space (ends mirrored)."""
    k = angles.size
    if k == 1:
        return np.ones(1)
    gaps = np.diff(angles)
    left = np.concatenate([[gaps[0]], gaps])
    right = np.concatenate([gaps, [gaps[-1]]])
    w = 0.5 * (left + right)
    if not np.any(w > 0):
        return np.ones(k)
    return np.maximum(w, 0.0)


def select_times(
    buffer: HorizonBuffer,
    sys: LinearSystem,
    K: int,
    seed: int = 0,
    now: float | None = None,
) -> list[float]:
    """Choose ``K`` buffered times whose directions are spread as uniformly as possible in angle.

    Every buffered time is weighted by the width of its cell in angle space,
    so that sampling favours sparsely covered angles. The draw is stratified:
    the cumulative weight axis is cut into ``K`` equal strata and one time is
    drawn from each, without replacement. Returns all buffered times when
    ``K`` exceeds the buffer size.
    """
    if len(buffer) == 0:
        raise ValueError("buffer is empty")
    times = buffer.times
    if K >= times.size:
        return list(times)
    t_now = times.max() if now is None else float(now)
    order = np.argsort(times, kind="stable")
    W = np.array([backward_functional(sys, tau, t_now) for tau in times[order]])
    keep = np.linalg.norm(W, axis=1) > 0
    cand = order[keep]
    if cand.size <= K:
        return list(times[np.sort(cand)])
    weights = _angle_weights(direction_angles(W[keep]))
    cdf = np.cumsum(weights) / weights.sum()

    rng = correction_stream(seed, 0xA1)
    u = (np.arange(K) + rng.random(K)) / K
    picks = np.minimum(np.searchsorted(cdf, u, side="right"), cand.size - 1)
    chosen: list[int] = []
    taken = np.zeros(cand.size, dtype=bool)
    for p in picks:
        if taken[p]:
            # nearest free neighbour in angle order
            free = np.flatnonzero(~taken)
            p = free[np.argmin(np.abs(free - p))]
        taken[p] = True
        chosen.append(int(p))
    return sorted(float(times[cand[p]]) for p in chosen)


def horizon_for_spread(sys: LinearSystem, spread: float, t_max: float = 1e3) -> float:
    """Shortest horizon whose backward directions sweep an angle of ``spread`` radians."""
    from scipy.optimize import brentq

    def swept(T):
        W = np.array([sys.output_functional(-s)[0] for s in np.linspace(0.0, T, 2001)])
        return direction_angles(W)[-1] - spread

    if swept(t_max) < 0:
        raise ValueError("spread not reachable")
    return float(brentq(swept, 1e-9, t_max, xtol=1e-10))


def observer_step(
    st: ObserverState,
    new_snapshots,
    dt: float,
    sys: System,
) -> ObserverState:
    """Predict the estimate forward by ``dt`` and correct it against buffered snapshots.

    ``new_snapshots`` may be a single snapshot, a sequence of snapshots, or
    None. With an empty buffer the step is a pure prediction.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    cfg = st.config
    est = flow(sys, st.estimate, dt)
    t = est.time
    buf = st.buffer.copy()
    if new_snapshots is not None:
        if isinstance(new_snapshots, MeasurementSnapshot):
            new_snapshots = [new_snapshots]
        for s in new_snapshots:
            buf.append(s)
    buf.evict(t)
    step = st.step + 1
    selected: list[float] = []
    if len(buf):
        seed = cfg.correction.rng_seed
        if isinstance(sys, LinearSystem):
            selected = select_times(buf, sys, cfg.k_times, seed=_mix(seed, step), now=t)
        else:
            times = buf.times
            rng = correction_stream(seed, 0xA2, step)
            k = min(cfg.k_times, times.size)
            selected = sorted(rng.choice(times, size=k, replace=False).tolist())
        by_time = {s.time: s for s in buf}
        for p in range(cfg.passes):
            # random order avoids consecutive near-parallel directions
            order = list(selected)
            correction_stream(seed, 0xA3, step, p).shuffle(order)
            for j, tau in enumerate(order):
                snap = by_time[tau]
                stream = (step, p, j)
                if isinstance(sys, LinearSystem):
                    try:
                        d = Direction.from_functional(backward_functional(sys, tau, t))
                    except DegenerateDirectionError:
                        continue
                    est = correct_along_direction(est, d, snap.samples, cfg.correction, stream)
                else:
                    # experimental: unfold around the buffered time
                    est = _unfolded_at(est, sys, snap, cfg.correction, stream)
    return ObserverState(est, buf, cfg, step, selected)


def _unfolded_at(est, sys: NonlinearSystem, snap, cfg, stream):
    # flow back to the buffered time, correct there, flow forward again
    back = flow(sys, est, snap.time - est.time)
    d = projection_direction(sys, snap.time)
    corrected = correct_along_direction(back, d, snap.samples, cfg, stream)
    return flow(sys, corrected, est.time - back.time)


def _mix(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([int(seed) & (2**64 - 1), int(step)]).generate_state(1, np.uint64)[0])


def run_observer(
    sys: System,
    init: ParticleEnsemble,
    batches: Sequence[Sequence[MeasurementSnapshot]],
    dt: float,
    horizon: float,
    config: ObserverConfig = ObserverConfig(),
    prefill: Sequence[MeasurementSnapshot] = (),
):
    """Yield the observer state after each step; ``batches[k]`` arrive during step ``k``."""
    st = ObserverState(init, HorizonBuffer(horizon, prefill), config)
    for batch in batches:
        st = observer_step(st, batch, dt, sys)
        yield st
