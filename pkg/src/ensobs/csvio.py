"""CSV readers and writers for ensembles, snapshots, tracks and metrics.

Floats are written with ``repr`` so that every file re-ingests bit for bit.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from .discrete import AnonymizedSnapshot
from .dynamics import ParticleEnsemble
from .estimator import MeasurementSnapshot

__all__ = [
    "read_ensemble",
    "read_metrics",
    "read_snapshots",
    "read_tracks",
    "write_ensemble",
    "write_metrics",
    "write_snapshots",
    "write_tracks",
]


def _fmt(x) -> str:
    return repr(float(x))


def _writer(path):
    fh = open(path, "w", newline="", encoding="ascii")
    return fh, csv.writer(fh, lineterminator="\n")


def _rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="ascii") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    return rows[0], rows[1:]


def write_ensemble(path, ens: ParticleEnsemble) -> Path:
    """Header ``id,x1,...,xn,t``; one row per particle."""
    fh, w = _writer(path)
    with fh:
        w.writerow(["id", *[f"x{k + 1}" for k in range(ens.dim)], "t"])
        t = _fmt(ens.time)
        for i, row in enumerate(ens.particles):
            w.writerow([i, *map(_fmt, row), t])
    return Path(path)


def read_ensemble(path) -> ParticleEnsemble:
    header, rows = _rows(path)
    n = len(header) - 2
    if n < 1 or header[0] != "id" or header[-1] != "t":
        raise ValueError(f"{path}: expected header id,x1..xn,t")
    if not rows:
        raise ValueError(f"{path}: no particles")
    ids = [int(r[0]) for r in rows]
    if ids != list(range(len(rows))):
        raise ValueError(f"{path}: particle ids must be 0..N-1 in order")
    x = np.array([[float(v) for v in r[1:-1]] for r in rows])
    times = {r[-1] for r in rows}
    if len(times) != 1:
        raise ValueError(f"{path}: particles carry different times")
    return ParticleEnsemble(x, float(times.pop()))


def write_snapshots(path, snapshots: Sequence) -> Path:
    """Header ``t,y``; one row per sample, grouped by time."""
    fh, w = _writer(path)
    with fh:
        w.writerow(["t", "y"])
        for s in snapshots:
            t = _fmt(s.time)
            for y in s.samples:
                w.writerow([t, _fmt(y)])
    return Path(path)


def read_snapshots(path, anonymized: bool = False) -> list:
    """Group ``t,y`` rows by time, keeping file order within each time."""
    header, rows = _rows(path)
    if header != ["t", "y"]:
        raise ValueError(f"{path}: expected header t,y")
    groups: dict[str, list[float]] = {}
    for t, y in rows:
        groups.setdefault(t, []).append(float(y))
    kind = AnonymizedSnapshot if anonymized else MeasurementSnapshot
    snaps = [kind(float(t), np.array(ys)) for t, ys in groups.items()]
    snaps.sort(key=lambda s: s.time)
    if anonymized and len({len(s) for s in snaps}) > 1:
        raise ValueError(f"{path}: anonymized snapshots need the same count at every time")
    return snaps


def write_tracks(path, steps: Sequence[ParticleEnsemble]) -> Path:
    """Header ``t,agent_id,x1,...,xn``; one row per agent and time."""
    fh, w = _writer(path)
    with fh:
        dim = steps[0].dim if steps else 0
        w.writerow(["t", "agent_id", *[f"x{k + 1}" for k in range(dim)]])
        for ens in steps:
            t = _fmt(ens.time)
            for i, row in enumerate(ens.particles):
                w.writerow([t, i, *map(_fmt, row)])
    return Path(path)


def read_tracks(path) -> list[ParticleEnsemble]:
    header, rows = _rows(path)
    if header[:2] != ["t", "agent_id"]:
        raise ValueError(f"{path}: expected header t,agent_id,x1..xn")
    groups: dict[str, list[list[float]]] = {}
    for r in rows:
        groups.setdefault(r[0], []).append([float(v) for v in r[2:]])
    return [ParticleEnsemble(np.array(x), float(t)) for t, x in groups.items()]


def write_metrics(path, rows: Sequence[tuple]) -> Path:
    """Header ``t,sliced_w1,runtime_ms``; runtime may be None (written blank)."""
    fh, w = _writer(path)
    with fh:
        w.writerow(["t", "sliced_w1", "runtime_ms"])
        for t, value, runtime in rows:
            w.writerow([_fmt(t), _fmt(value), "" if runtime is None else _fmt(runtime)])
    return Path(path)


def read_metrics(path) -> list[tuple]:
    header, rows = _rows(path)
    if header != ["t", "sliced_w1", "runtime_ms"]:
        raise ValueError(f"{path}: expected header t,sliced_w1,runtime_ms")
    return [(float(t), float(v), float(r) if r else None) for t, v, r in rows]
