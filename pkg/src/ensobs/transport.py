"""Optimal transport between two histograms on a common 1D grid.

A plan ``T`` is an (l, l) matrix where ``T[i, j]`` is the mass moved from
source bin ``j`` to target bin ``i``: columns sum to the source vector, rows
to the target vector. The ground cost is ``|i - j|`` in bin units.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConvergenceWarning",
    "EmptySourceError",
    "TransportPlan",
    "conditional_destination",
    "ot_1d_exact",
    "plan_cost",
    "sinkhorn",
    "solve",
    "wasserstein1_binned",
]

SMOOTHING = 1e-12


class ConvergenceWarning(RuntimeWarning):
    pass


class EmptySourceError(ValueError):
    """The requested source bin carries no mass."""


@dataclass(frozen=True)
class TransportPlan:
    T: np.ndarray
    source: np.ndarray
    target: np.ndarray
    iterations: int = 0
    marginal_error: float = 0.0

    @property
    def bins(self) -> int:
        return self.T.shape[0]

    def marginal_errors(self) -> tuple[float, float]:
        """Max deviation of (column sums from source, row sums from target)."""
        return (
            float(np.max(np.abs(self.T.sum(axis=0) - self.source))),
            float(np.max(np.abs(self.T.sum(axis=1) - self.target))),
        )


def _check_pair(source, target, atol=1e-9):
    p = np.asarray(source, dtype=float).ravel()
    q = np.asarray(target, dtype=float).ravel()
    if p.shape != q.shape:
        raise ValueError(f"histograms differ in length: {p.size} vs {q.size}")
    for name, v in (("source", p), ("target", q)):
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError(f"{name} has negative or non-finite masses")
        if abs(v.sum() - 1.0) > atol:
            raise ValueError(f"{name} is not normalized (sum={v.sum()!r})")
    return p, q


def ot_1d_exact(source, target) -> TransportPlan:
    """Monotone (north-west corner) coupling, optimal for the ``|i - j|`` cost."""
    p, q = _check_pair(source, target)
    ell = p.size
    T = np.zeros((ell, ell))
    rs = p.copy()
    rt = q.copy()
    i = j = 0
    while i < ell and j < ell:
        m = min(rt[i], rs[j])
        T[i, j] += m
        rt[i] -= m
        rs[j] -= m
        # exactly one of these hits zero by construction (both on ties)
        if rt[i] <= 0.0:
            i += 1
        if rs[j] <= 0.0:
            j += 1
    return TransportPlan(T, p, q)


def sinkhorn(
    source,
    target,
    epsilon: float = 0.05,
    max_iters: int = 10_000,
    tol: float = 1e-9,
) -> TransportPlan:
    """Entropic transport plan ``diag(u) K diag(w)`` with ``K_ij = exp(-|i-j| / epsilon)``.

    Uses log-stabilized scaling so that small ``epsilon`` does not underflow.
    Zero masses are lifted by 1e-12 and renormalized first. If the marginal
    error is still above ``tol`` after ``max_iters`` iterations a
    :class:`ConvergenceWarning` is issued and the last plan is returned.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    p, q = _check_pair(source, target)
    p = p + SMOOTHING
    p /= p.sum()
    q = q + SMOOTHING
    q /= q.sum()
    ell = p.size
    idx = np.arange(ell)
    cost = np.abs(idx[:, None] - idx[None, :]).astype(float)
    logp, logq = np.log(p), np.log(q)

    # T_ij = u_i exp((f_i + g_j - |i-j|) / eps) w_j; rows -> target, columns -> source.
    # Scalings are absorbed into the potentials f, g whenever they drift far
    # from 1, and the potentials are warm-started along a decreasing epsilon
    # schedule ending at the requested value.
    schedule = [float(epsilon)]
    while schedule[-1] * 4.0 < float(ell):
        schedule.append(schedule[-1] * 4.0)
    schedule.reverse()
    f = np.zeros(ell)
    g = np.zeros(ell)
    it = 0
    for k, eps_k in enumerate(schedule):
        stage_tol = tol if k == len(schedule) - 1 else max(tol, 1e-4)
        K = np.exp((f[:, None] + g[None, :] - cost) / eps_k)
        u = np.ones(ell)
        w = np.ones(ell)
        while it < max_iters:
            it += 1
            u = q / (K @ w)
            w = p / (K.T @ u)
            if max(u.max(), w.max()) > 1e30 or min(u.min(), w.min()) < 1e-30:
                f += eps_k * np.log(u)
                g += eps_k * np.log(w)
                K = np.exp((f[:, None] + g[None, :] - cost) / eps_k)
                u[:] = 1.0
                w[:] = 1.0
            if it % 10 == 0:
                row_err = np.max(np.abs(u * (K @ w) - q))
                if row_err < stage_tol:
                    break
        f += eps_k * np.log(u)
        g += eps_k * np.log(w)
    T = np.exp((f[:, None] + g[None, :] - cost) / epsilon)
    err = max(float(np.max(np.abs(T.sum(axis=1) - q))), float(np.max(np.abs(T.sum(axis=0) - p))))
    if err >= tol:
        warnings.warn(
            f"Sinkhorn stopped after {it} iterations with marginal error {err:.3e}",
            ConvergenceWarning,
            stacklevel=2,
        )
    return TransportPlan(T, p, q, iterations=it, marginal_error=err)


def solve(source, target, solver: str = "exact", **kwargs) -> TransportPlan:
    if solver == "exact":
        return ot_1d_exact(source, target)
    if solver == "sinkhorn":
        return sinkhorn(source, target, **kwargs)
    raise ValueError(f"unknown solver {solver!r}")


def plan_cost(plan: TransportPlan) -> float:
    ell = plan.bins
    idx = np.arange(ell)
    return float(np.sum(np.abs(idx[:, None] - idx[None, :]) * plan.T))


def conditional_destination(plan: TransportPlan, source_bin: int) -> np.ndarray:
    """Distribution of target bins for mass sitting in ``source_bin``.

    This is column ``source_bin`` of the plan divided by its source mass.
    """
    mass = plan.source[source_bin]
    if mass <= 0:
        raise EmptySourceError(f"source bin {source_bin} is empty")
    col = plan.T[:, source_bin] / mass
    return col / col.sum()


def wasserstein1_binned(a, b) -> float:
    """W1 between two histograms on the same grid, in bin units."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError("histograms differ in length")
    return float(np.sum(np.abs(np.cumsum(a - b)[:-1])))
