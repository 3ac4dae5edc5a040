"""
System models, particle ensembles and their flows.

An ensemble is always represented by a finite particle set. Linear systems
are propagated exactly through the matrix exponential; nonlinear systems use
a fixed-step classical Runge-Kutta scheme, with backward flows obtained by
integrating the negated vector field forward in time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import scipy.linalg

__all__ = [
    "DegenerateDirectionError",
    "Direction",
    "DivergenceError",
    "LinearSystem",
    "NonlinearSystem",
    "ParticleEnsemble",
    "double_integrator",
    "flow",
    "flow_linear",
    "flow_nonlinear",
    "harmonic_oscillator",
    "matrix_exponential",
    "nonlinear_oscillator",
    "nonlinear_oscillator_energy",
    "output_samples",
    "projection_direction",
]


class DivergenceError(ArithmeticError):
    """Raised when an integrated particle leaves the finite floats."""

    def __init__(self, index: int, time: float):
        super().__init__(f"particle {index} diverged at t={time:.6g}")
        self.index = index
        self.time = time


class DegenerateDirectionError(ValueError):
    """Raised when a projection functional vanishes identically."""


@dataclass(frozen=True)
class ParticleEnsemble:
    """N particles in R^n observed at a common time.

    Row ``i`` of ``particles`` is particle ``i``; operations never reorder rows.
    """

    particles: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        x = np.array(self.particles, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"particles must have shape (N, n) with N, n >= 1, got {x.shape}")
        x.setflags(write=False)
        object.__setattr__(self, "particles", x)
        object.__setattr__(self, "time", float(self.time))

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    def __len__(self) -> int:
        return self.size

    def replace(self, particles=None, time=None) -> "ParticleEnsemble":
        return ParticleEnsemble(
            self.particles if particles is None else particles,
            self.time if time is None else time,
        )


@dataclass(frozen=True)
class LinearSystem:
    """``dx/dt = A x``, ``y = C x``."""

    A: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if C.shape[1] != A.shape[0]:
            raise ValueError(f"C has {C.shape[1]} columns but the state dimension is {A.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", C)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    def output_functional(self, t: float) -> np.ndarray:
        """Return ``C exp(A t)``, shape (m, n)."""
        return self.C @ matrix_exponential(self.A, t)


@dataclass(frozen=True)
class NonlinearSystem:
    """``dx/dt = f(x)`` with a linear scalar output ``y = <c, x>``.

    ``vector_field`` receives an (N, n) array and must return an array of the
    same shape.
    """

    vector_field: Callable[[np.ndarray], np.ndarray]
    output: np.ndarray
    integrator_step: float = 1e-3
    name: str = field(default="", compare=False)

    def __post_init__(self):
        c = np.asarray(self.output, dtype=float).ravel()
        if not np.any(c):
            raise ValueError("output functional c must be nonzero")
        if not self.integrator_step > 0:
            raise ValueError("integrator_step must be positive")
        object.__setattr__(self, "output", c)

    @property
    def dim(self) -> int:
        return self.output.size

    @property
    def n_outputs(self) -> int:
        return 1


System = Union[LinearSystem, NonlinearSystem]


@dataclass(frozen=True)
class Direction:
    """A unit direction ``v`` together with the scale ``s`` of the raw functional ``w = s v``."""

    v: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float).ravel()
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise ValueError("direction must have unit norm")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def from_functional(cls, w) -> "Direction":
        w = np.asarray(w, dtype=float).ravel()
        s = np.linalg.norm(w)
        if not s > 0 or not np.isfinite(s):
            raise DegenerateDirectionError("projection functional is zero")
        return cls(w / s, s)

    @property
    def functional(self) -> np.ndarray:
        return self.scale * self.v

    @property
    def angle(self) -> float:
        """Polar angle of ``v`` in radians (planar directions only)."""
        if self.v.size != 2:
            raise ValueError("angle is only defined for planar directions")
        return float(np.arctan2(self.v[1], self.v[0]))


def matrix_exponential(A, t: float = 1.0) -> np.ndarray:
    """Return ``exp(A t)`` (Pade scaling-and-squaring)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix exponential needs a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return scipy.linalg.expm(A * float(t))


def flow_linear(sys: LinearSystem, ens: ParticleEnsemble, dt: float) -> ParticleEnsemble:
    if ens.dim != sys.dim:
        raise ValueError(f"ensemble dimension {ens.dim} does not match system dimension {sys.dim}")
    if dt == 0:
        return ens
    with np.errstate(over="ignore", invalid="ignore"):
        Phi = matrix_exponential(sys.A, dt)
        x = ens.particles @ Phi.T
    _check_finite(x, ens.time + dt)
    return ens.replace(x, ens.time + dt)


def _rk4(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def flow_nonlinear(
    sys: NonlinearSystem, ens: ParticleEnsemble, dt: float, step: float | None = None
) -> ParticleEnsemble:
    """Advance every particle along the flow for time ``dt`` with fixed-step RK4.

    Negative ``dt`` integrates ``-f`` forward for ``|dt|``. The last step is
    shortened so the total elapsed time is exactly ``|dt|``.
    """
    if ens.dim != sys.dim:
        raise ValueError(f"ensemble dimension {ens.dim} does not match system dimension {sys.dim}")
    if dt == 0:
        return ens
    h = float(step if step is not None else sys.integrator_step)
    if not h > 0:
        raise ValueError("integrator step must be positive")
    sign = 1.0 if dt > 0 else -1.0
    f = sys.vector_field if sign > 0 else (lambda z: -sys.vector_field(z))

    total = abs(float(dt))
    n_full = int(np.floor(total / h + 1e-9))
    rest = total - n_full * h
    if rest < 1e-12 * max(1.0, total):
        rest = 0.0

    x = np.array(ens.particles, dtype=float)
    elapsed = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_full):
            x = _rk4(f, x, h)
            elapsed += h
            if (k & 63) == 63:
                _check_finite(x, ens.time + sign * elapsed)
        if rest > 0:
            x = _rk4(f, x, rest)
    _check_finite(x, ens.time + dt)
    return ens.replace(x, ens.time + dt)


def _check_finite(x, t):
    bad = ~np.all(np.isfinite(x), axis=1)
    if bad.any():
        raise DivergenceError(int(np.flatnonzero(bad)[0]), t)


def flow(sys: System, ens: ParticleEnsemble, dt: float) -> ParticleEnsemble:
    if isinstance(sys, LinearSystem):
        return flow_linear(sys, ens, dt)
    return flow_nonlinear(sys, ens, dt)


def output_samples(sys: System, ens: ParticleEnsemble) -> np.ndarray:
    """Outputs ``h(x_i)`` in particle order.

    Returns shape (N,) for scalar-output systems and (N, m) otherwise.
    """
    if ens.dim != sys.dim:
        raise ValueError(f"ensemble dimension {ens.dim} does not match system dimension {sys.dim}")
    if isinstance(sys, NonlinearSystem):
        return ens.particles @ sys.output
    y = ens.particles @ sys.C.T
    return y[:, 0] if sys.n_outputs == 1 else y


def projection_direction(sys: System, t: float) -> Direction:
    """Direction along which outputs at time ``t`` project the initial ensemble.

    For a linear system the outputs at ``t`` equal ``s <v, x0>`` with
    ``s v = (C exp(At))^T``. For a nonlinear system with output ``<c, x>``
    the direction is the (time independent) ``c / |c|`` acting on the
    propagated state.
    """
    if isinstance(sys, NonlinearSystem):
        return Direction.from_functional(sys.output)
    if sys.n_outputs != 1:
        raise ValueError("projection directions require a scalar output (m = 1)")
    w = sys.output_functional(t)[0]
    if np.linalg.norm(w) <= 1e-300:
        raise DegenerateDirectionError(f"C exp(A t) vanishes at t={t}")
    return Direction.from_functional(w)


# Built-in models

def harmonic_oscillator() -> LinearSystem:
    return LinearSystem([[0.0, 1.0], [-1.0, 0.0]], [[1.0, 0.0]])


def double_integrator() -> LinearSystem:
    return LinearSystem([[0.0, 1.0], [0.0, 0.0]], [[1.0, 0.0]])


def _oscillator_field(x):
    x1 = x[..., 0]
    out = np.empty_like(x)
    out[..., 0] = x[..., 1]
    out[..., 1] = -4.0 * x1 + x1 * x1
    return out


def nonlinear_oscillator(step: float = 1e-3) -> NonlinearSystem:
    """``x1' = x2``, ``x2' = -4 x1 + x1^2`` observed through ``y = x1``."""
    return NonlinearSystem(_oscillator_field, [1.0, 0.0], step, name="nonlinear-oscillator")


def nonlinear_oscillator_energy(x) -> np.ndarray:
    """First integral ``x2^2/2 + 2 x1^2 - x1^3/3`` of the nonlinear oscillator."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return 0.5 * x2 * x2 + 2.0 * x1 * x1 - x1**3 / 3.0
