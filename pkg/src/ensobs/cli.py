"""Command-line scenario runner.

Scenarios are described by a :class:`ScenarioConfig` (JSON-compatible). The
subcommands simulate data, reconstruct initial ensembles, run the moving
horizon observer or the discrete tracker, and compute metrics, writing CSV
artifacts and SVG plots to an output directory.

Measurement timing: snapshots are taken every ``sample_period`` on the grid
``k * sample_period``. A snapshot taken at ``tau`` becomes available
``latency`` later; step ``k`` of an online run ends at ``k * dt`` and
receives the snapshots with ``(k - 1) dt < tau + latency <= k dt``. The
snapshots available at time 0 prefill the horizon buffer.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import time as _time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import csvio
from .correction import CorrectionConfig, correction_stream
from .discrete import AnonymizedSnapshot, discrete_estimate, discrete_observe
from .dynamics import (
    DivergenceError,
    LinearSystem,
    NonlinearSystem,
    ParticleEnsemble,
    double_integrator,
    flow,
    harmonic_oscillator,
    nonlinear_oscillator,
)
from .estimator import InitSpec, MeasurementSnapshot, SweepSchedule, estimate_initial, initial_ensemble, simulate_snapshots
from .metrics import sliced_w1, tv_on_grid, w1_samples_1d
from .observer import ObserverConfig, run_observer

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "build_system",
    "built_in_scenarios",
    "draw_truth",
    "main",
    "measurement_schedule",
    "run_scenario",
]

log = logging.getLogger("ensobs")

COMMANDS = ("simulate", "estimate", "observe", "track-discrete")
MODELS = {
    "harmonic-oscillator": harmonic_oscillator,
    "double-integrator": double_integrator,
    "nonlinear-oscillator": nonlinear_oscillator,
}

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


class ConfigError(ValueError):
    """Invalid scenario configuration; ``problems`` lists every violation."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class ScenarioConfig:
    """Everything needed to run one scenario.

    ``system`` is either ``{"model": name, "step": h}`` for a built-in model
    or ``{"A": [[...]], "C": [[...]]}`` for a linear system.
    ``truth`` is either a Gaussian mixture ``{"weights", "means",
    "covariances"}`` sampled ``N`` times, or ``{"points": [[...]]}`` for a
    fixed set of agents. ``init`` is ``{"kind": "box"}`` (backprojection box
    or an explicit ``"box": [lo, hi]``) or ``{"kind": "perturbed", "sigma": s}``
    (truth plus Gaussian noise, for tracking agents).
    """

    scenario: str = "custom"
    command: str = "estimate"
    system: dict = field(default_factory=lambda: {"model": "harmonic-oscillator"})
    truth: dict = field(
        default_factory=lambda: {"weights": [1.0], "means": [[0.0, 0.0]], "covariances": [[[1.0, 0.0], [0.0, 1.0]]]}
    )
    N: int = 2000
    M: int = 2000
    bins: int = 50
    sweeps: int = 1
    sweep_order: str = "random"
    times: list | None = None
    horizon: float | None = None
    k_times: int = 10
    passes: int = 1
    dt: float = 0.5
    steps: int = 3
    sample_period: float = 0.1
    latency: float = 0.0
    noise_sigma: float = 0.0
    solver: str = "exact"
    relaxation: float = 1.0
    init: dict = field(default_factory=lambda: {"kind": "box"})
    n_dirs: int = 200
    seed: int = 0
    out: str = "out"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict, base: "ScenarioConfig | None" = None) -> "ScenarioConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        merged = (base or cls()).to_dict()
        merged.update({k: v for k, v in data.items() if k in names})
        cfg = cls(**merged)
        if unknown:
            problems = [f"unknown key {k!r}" for k in unknown]
            try:
                cfg.validate()
            except ConfigError as exc:
                problems += exc.problems
            raise ConfigError(problems)
        return cfg

    def validate(self) -> "ScenarioConfig":
        """Raise :class:`ConfigError` listing all problems, else return self."""
        p: list[str] = []
        if self.command not in COMMANDS:
            p.append(f"command must be one of {COMMANDS}, got {self.command!r}")
        for name in ("N", "M", "bins", "sweeps", "k_times", "passes", "steps", "n_dirs"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                p.append(f"{name} must be an integer >= 1, got {v!r}")
        for name in ("dt", "sample_period"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                p.append(f"{name} must be positive, got {v!r}")
        if self.horizon is not None and not (isinstance(self.horizon, (int, float)) and self.horizon > 0):
            p.append(f"horizon must be positive or null, got {self.horizon!r}")
        if not (isinstance(self.latency, (int, float)) and self.latency >= 0):
            p.append("latency must be nonnegative")
        if not (isinstance(self.noise_sigma, (int, float)) and self.noise_sigma >= 0):
            p.append("noise_sigma must be nonnegative")
        if not (isinstance(self.relaxation, (int, float)) and 0 < self.relaxation <= 2):
            p.append("relaxation must lie in (0, 2]")
        if self.solver not in ("exact", "sinkhorn"):
            p.append(f"solver must be 'exact' or 'sinkhorn', got {self.solver!r}")
        if self.sweep_order not in ("random", "sequential"):
            p.append("sweep_order must be 'random' or 'sequential'")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            p.append("seed must be an unsigned 64-bit integer")
        if self.times is not None:
            try:
                t = np.asarray(self.times, dtype=float)
                if t.ndim != 1 or t.size == 0 or not np.all(np.isfinite(t)):
                    raise ValueError
            except (TypeError, ValueError):
                p.append("times must be a nonempty list of finite numbers")

        dim = None
        try:
            dim = build_system(self).dim
        except (ValueError, KeyError, TypeError) as exc:
            p.append(f"system: {exc}")
        p.extend(_truth_problems(self.truth, dim))
        kind = self.init.get("kind") if isinstance(self.init, dict) else None
        if kind not in ("box", "perturbed"):
            p.append("init.kind must be 'box' or 'perturbed'")
        elif kind == "perturbed":
            if "points" not in self.truth:
                p.append("init 'perturbed' needs a truth given by points")
            if not self.init.get("sigma", 0) >= 0:
                p.append("init.sigma must be nonnegative")
        if self.command == "estimate" and self.times is None:
            p.append("command 'estimate' needs snapshot times")
        if self.command == "observe" and self.horizon is None:
            p.append("command 'observe' needs a horizon")
        if self.command == "track-discrete":
            if self.horizon is None and self.times is None:
                p.append("command 'track-discrete' needs a horizon or snapshot times")
            if dim is not None and isinstance(build_system(self), NonlinearSystem):
                p.append("discrete tracking needs a linear system")
        if p:
            raise ConfigError(p)
        return self

    @property
    def n_agents(self) -> int:
        return len(self.truth["points"]) if "points" in self.truth else self.N


def _truth_problems(truth, dim) -> list[str]:
    p = []
    if not isinstance(truth, dict):
        return ["truth must be an object"]
    if "points" in truth:
        x = np.asarray(truth["points"], dtype=float)
        if x.ndim != 2 or x.shape[0] < 1 or (dim is not None and x.shape[1] != dim):
            p.append(f"truth.points must be an (N, {dim}) array")
        return p
    try:
        w = np.asarray(truth["weights"], dtype=float)
        mu = np.asarray(truth["means"], dtype=float)
        cov = np.asarray(truth["covariances"], dtype=float)
    except (KeyError, ValueError, TypeError) as exc:
        return [f"truth mixture malformed: {exc}"]
    k = w.size
    if k < 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        p.append("truth.weights must be nonnegative and sum to 1")
    if mu.shape != (k, dim if dim is not None else mu.shape[-1]):
        p.append(f"truth.means must have shape ({k}, {dim})")
    if cov.ndim != 3 or cov.shape[0] != k or cov.shape[1] != cov.shape[2] or (dim and cov.shape[1] != dim):
        p.append(f"truth.covariances must have shape ({k}, {dim}, {dim})")
        return p
    for j, S in enumerate(cov):
        if not np.allclose(S, S.T, rtol=0, atol=1e-12):
            p.append(f"truth.covariances[{j}] is not symmetric")
            continue
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            p.append(f"truth.covariances[{j}] is not positive definite")
    return p


def build_system(cfg: ScenarioConfig) -> LinearSystem | NonlinearSystem:
    spec = cfg.system
    if not isinstance(spec, dict):
        raise TypeError("system must be an object")
    if "model" in spec:
        name = spec["model"]
        if name not in MODELS:
            raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}")
        if name == "nonlinear-oscillator":
            return nonlinear_oscillator(float(spec.get("step", 1e-3)))
        return MODELS[name]()
    return LinearSystem(spec["A"], spec["C"])


def draw_truth(cfg: ScenarioConfig, n: int | None = None, seed: int | None = None, stream: int = 0) -> ParticleEnsemble:
    """Sample the truth (or return the fixed agents) at time 0.

    ``stream`` selects independent draws from the same mixture.
    """
    if "points" in cfg.truth:
        return ParticleEnsemble(np.asarray(cfg.truth["points"], dtype=float), 0.0)
    n = cfg.N if n is None else n
    seed = cfg.seed if seed is None else seed
    w = np.asarray(cfg.truth["weights"], dtype=float)
    mu = np.asarray(cfg.truth["means"], dtype=float)
    L = np.linalg.cholesky(np.asarray(cfg.truth["covariances"], dtype=float))
    rng = correction_stream(seed, 0x7207, stream)
    comp = rng.choice(w.size, size=n, p=w / w.sum())
    z = rng.standard_normal((n, mu.shape[1]))
    x = mu[comp] + np.einsum("nij,nj->ni", L[comp], z)
    return ParticleEnsemble(x, 0.0)


def measurement_times(cfg: ScenarioConfig) -> np.ndarray:
    """All snapshot times of a run, in increasing order."""
    if cfg.horizon is None:
        return np.asarray(cfg.times, dtype=float)
    h = cfg.sample_period
    k0 = math.ceil(-cfg.horizon / h - 1e-9)
    k1 = math.floor((cfg.steps * cfg.dt - cfg.latency) / h + 1e-9)
    return np.round(np.arange(k0, k1 + 1) * h, 10)


def measurement_schedule(cfg: ScenarioConfig, snapshots: Sequence) -> tuple[list, list[list]]:
    """Split time-ordered snapshots into the prefill and one batch per step."""
    eps = 1e-9
    prefill = [s for s in snapshots if s.time + cfg.latency <= eps]
    batches = []
    for k in range(1, cfg.steps + 1):
        lo, hi = (k - 1) * cfg.dt, k * cfg.dt
        batches.append([s for s in snapshots if lo + eps < s.time + cfg.latency <= hi + eps])
    return prefill, batches


def simulate(cfg: ScenarioConfig, truth: ParticleEnsemble | None = None, anonymized: bool = False) -> list:
    """Output snapshots of the truth at every measurement time.

    Anonymized snapshots record every agent once, shuffled.
    """
    sys_ = build_system(cfg)
    truth = draw_truth(cfg) if truth is None else truth
    times = measurement_times(cfg)
    if anonymized:
        snaps = simulate_snapshots(sys_, truth, times, truth.size, cfg.noise_sigma, cfg.seed)
        return [AnonymizedSnapshot(s.time, s.samples) for s in snaps]
    return simulate_snapshots(sys_, truth, times, cfg.M, cfg.noise_sigma, cfg.seed)


def correction_config(cfg: ScenarioConfig) -> CorrectionConfig:
    return CorrectionConfig(bins=cfg.bins, solver=cfg.solver, rng_seed=cfg.seed)


def _initial(cfg: ScenarioConfig, sys_, truth, snapshots) -> ParticleEnsemble:
    if cfg.init.get("kind") == "perturbed":
        rng = correction_stream(cfg.seed, 0x1A17)
        sigma = float(cfg.init.get("sigma", 0.0))
        return truth.replace(truth.particles + sigma * rng.standard_normal(truth.particles.shape))
    measurements = [MeasurementSnapshot(s.time, s.samples) for s in snapshots]
    return initial_ensemble(sys_, measurements, cfg.n_agents, _init_spec(cfg), cfg.seed)


# Running


class _Timer:
    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.t0 = 0.0

    def __enter__(self):
        self.t0 = _time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.ms = (_time.perf_counter() - self.t0) * 1e3

    def value(self):
        return self.ms if self.enabled else None


def run_scenario(cfg: ScenarioConfig, command: str | None = None, timings: bool = False) -> dict:
    """Run ``command`` (default ``cfg.command``) and write its artifacts to ``cfg.out``.

    Returns a mapping of artifact names to paths. Raises :class:`ConfigError`
    on invalid configs and :class:`DivergenceError` (annotated with the stage)
    when a flow diverges.
    """
    if command is not None:
        cfg = dataclasses.replace(cfg, command=command)
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sys_ = build_system(cfg)
    files: dict[str, Path] = {}
    files["config"] = out / "config.json"
    files["config"].write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    discrete = cfg.command == "track-discrete" or "points" in cfg.truth
    stage = "simulate"
    try:
        truth = draw_truth(cfg)
        snaps = simulate(cfg, truth, anonymized=discrete)
        files["truth"] = csvio.write_ensemble(out / "truth.csv", truth)
        files["snapshots"] = csvio.write_snapshots(out / "snapshots.csv", snaps)
        if cfg.command == "estimate":
            stage = "estimate"
            files.update(_run_estimate(cfg, sys_, truth, snaps, out, timings))
        elif cfg.command == "observe":
            stage = "observe"
            files.update(_run_observe(cfg, sys_, truth, snaps, out, timings))
        elif cfg.command == "track-discrete":
            stage = "track-discrete"
            files.update(_run_discrete(cfg, sys_, truth, snaps, out, timings))
    except DivergenceError as exc:
        exc.stage = stage
        raise
    return files


def _reference(cfg, truth):
    # a fresh draw for mixtures, the agents themselves otherwise
    return truth if "points" in cfg.truth else draw_truth(cfg, stream=1)


def _run_estimate(cfg, sys_, truth, snaps, out, timings):
    with _Timer(timings) as tm:
        res = estimate_initial(
            sys_,
            snaps,
            cfg.N,
            _init_spec(cfg),
            SweepSchedule(cfg.sweeps, cfg.sweep_order),
            correction_config(cfg),
        )
    est = res.ensemble
    ref = _reference(cfg, truth)
    files = {"estimate": csvio.write_ensemble(out / "estimate.csv", est)}
    files["metrics"] = csvio.write_metrics(
        out / "metrics.csv", [(est.time, sliced_w1(est, ref, cfg.n_dirs, cfg.seed), tm.value())]
    )
    files["plot"] = _plot(out / "estimate.svg", [("truth", ref), ("estimate", est)], "initial ensemble")
    return files


def _init_spec(cfg):
    box = cfg.init.get("box")
    return InitSpec("box", None if box is None else tuple(np.asarray(b, dtype=float) for b in box))


def _run_observe(cfg, sys_, truth, snaps, out, timings):
    prefill, batches = measurement_schedule(cfg, snaps)
    init = _initial(cfg, sys_, truth, prefill or snaps[:1])
    config = ObserverConfig(cfg.k_times, cfg.passes, correction_config(cfg))
    files = {"init": csvio.write_ensemble(out / "estimate_step000.csv", init)}
    rows = []
    last = init
    it = run_observer(sys_, init, batches, cfg.dt, cfg.horizon, config, prefill)
    for k in range(1, cfg.steps + 1):
        with _Timer(timings) as tm:
            st = next(it)
        last = st.estimate
        files[f"step{k}"] = csvio.write_ensemble(out / f"estimate_step{k:03d}.csv", last)
        ref = flow(sys_, _reference(cfg, truth), last.time)
        rows.append((last.time, sliced_w1(last, ref, cfg.n_dirs, cfg.seed), tm.value()))
    files["metrics"] = csvio.write_metrics(out / "metrics.csv", rows)
    ref = flow(sys_, _reference(cfg, truth), last.time)
    files["plot"] = _plot(out / "observe.svg", [("truth", ref), ("estimate", last)], f"t = {last.time:g}")
    return files


def _run_discrete(cfg, sys_, truth, snaps, out, timings):
    init = _initial(cfg, sys_, truth, [s for s in snaps if s.time <= 1e-9] or snaps)
    files = {}
    if cfg.horizon is None:
        with _Timer(timings) as tm:
            res = discrete_estimate(
                sys_, snaps, init, SweepSchedule(cfg.sweeps, cfg.sweep_order), cfg.relaxation, cfg.seed, tol=1e-12
            )
        tracks = [res.ensemble]
        rows = [(0.0, sliced_w1(res.ensemble, truth, cfg.n_dirs, cfg.seed), tm.value())]
    else:
        prefill, batches = measurement_schedule(cfg, snaps)
        tracks, rows = [init], []
        it = discrete_observe(
            sys_, batches, init, cfg.horizon, cfg.k_times, cfg.dt, cfg.relaxation, cfg.seed, prefill
        )
        for _ in range(cfg.steps):
            with _Timer(timings) as tm:
                step = next(it)
            tracks.append(step.estimate)
            ref = flow(sys_, truth, step.time)
            rows.append((step.time, sliced_w1(step.estimate, ref, cfg.n_dirs, cfg.seed), tm.value()))
    files["tracks"] = csvio.write_tracks(out / "tracks.csv", tracks)
    files["metrics"] = csvio.write_metrics(out / "metrics.csv", rows)
    last = tracks[-1]
    files["plot"] = _plot(out / "tracks.svg", [("truth", flow(sys_, truth, last.time)), ("estimate", last)], "agents")
    return files


def _plot(path, layers, title) -> Path:
    """Scatter of the first two coordinates and a histogram of the first one."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "ensobs", "svg.fonttype": "none"}):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 4))
        for name, ens in layers:
            x = ens.particles
            y = x[:, 1] if x.shape[1] > 1 else np.zeros(len(x))
            ax0.scatter(x[:, 0], y, s=4, alpha=0.5, label=name)
            ax1.hist(x[:, 0], bins=50, histtype="step", density=True, label=name)
        ax0.set_xlabel("x1")
        ax0.set_ylabel("x2")
        ax1.set_xlabel("x1")
        ax0.legend()
        fig.suptitle(title)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return Path(path)


# Built-in scenarios


def built_in_scenarios() -> list[ScenarioConfig]:
    """The six named scenarios shipped with the tool."""
    eye = lambda s: [[s * s, 0.0], [0.0, s * s]]  # noqa: E731
    mhe = dict(
        system={"model": "double-integrator"},
        truth={"weights": [0.5, 0.5], "means": [[-1.0, 0.5], [1.0, -0.5]], "covariances": [eye(0.3), eye(0.3)]},
        horizon=3.0,
        k_times=10,
        dt=0.5,
        steps=3,
        sample_period=0.1,
        latency=0.1,
    )
    return [
        ScenarioConfig(
            scenario="harmonic-bimodal",
            command="estimate",
            system={"model": "harmonic-oscillator"},
            truth={"weights": [0.5, 0.5], "means": [[-1.5, 0.5], [1.5, -0.5]], "covariances": [eye(0.4), eye(0.4)]},
            N=2000,
            M=2000,
            sweeps=2,
            times=[k * math.pi / 8 for k in range(8)],
            out="out/harmonic-bimodal",
        ),
        ScenarioConfig(scenario="double-integrator-mhe", command="observe", N=2000, M=2000, out="out/double-integrator-mhe", **mhe),
        ScenarioConfig(
            scenario="discrete-5",
            command="track-discrete",
            system={"model": "double-integrator"},
            truth={"points": [[-1.5, 0.8], [-0.4, -1.2], [0.3, 1.6], [1.1, -0.3], [1.9, 0.5]]},
            sweeps=200,
            times=[math.tan(a) for a in np.linspace(0.0, math.radians(75.0), 8)],
            init={"kind": "perturbed", "sigma": 0.5},
            out="out/discrete-5",
        ),
        ScenarioConfig(
            scenario="discrete-noisy",
            command="track-discrete",
            system={"model": "double-integrator"},
            truth={"points": [[-6.0, 0.0], [-2.0, 0.4], [2.0, -0.4], [5.0, 0.1], [8.0, -0.1]]},
            horizon=1.0,
            k_times=5,
            dt=0.1,
            steps=100,
            sample_period=0.1,
            noise_sigma=0.2,
            init={"kind": "perturbed", "sigma": 0.3},
            out="out/discrete-noisy",
        ),
        ScenarioConfig(
            scenario="nonlinear-oscillator",
            command="estimate",
            system={"model": "nonlinear-oscillator", "step": 1e-3},
            truth={
                "weights": [0.5, 0.5],
                "means": [[-1.0, 0.5], [1.5, -0.5]],
                "covariances": [eye(0.25), eye(0.25)],
            },
            N=2000,
            M=2000,
            sweeps=2,
            times=[0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75],
            out="out/nonlinear-oscillator",
        ),
        ScenarioConfig(
            scenario="discrete-population",
            command="track-discrete",
            N=10_000,
            M=10_000,
            out="out/discrete-population",
            **mhe,
        ),
    ]


def _scenario(name: str) -> ScenarioConfig:
    for cfg in built_in_scenarios():
        if cfg.scenario == name:
            return cfg
    names = ", ".join(c.scenario for c in built_in_scenarios())
    raise ConfigError([f"unknown scenario {name!r}; available: {names}"])


# Entry point


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON scenario config (overrides the chosen scenario)")
    common.add_argument("--scenario", metavar="NAME", help="built-in scenario to start from")
    common.add_argument("--seed", type=int, metavar="U64")
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--bins", type=int, metavar="L")
    common.add_argument("--solver", choices=["exact", "sinkhorn"])
    common.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    common.add_argument("--timings", action="store_true", help="record wall times in metrics.csv")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ensobs", description="Ensemble observers on particle sets.")
    p.add_argument("--list-scenarios", action="store_true", help="list built-in scenarios and exit")
    sub = p.add_subparsers(dest="command")
    for name, help_ in (
        ("simulate", "draw the truth and write snapshot CSVs"),
        ("estimate", "reconstruct the initial ensemble from snapshots"),
        ("observe", "run the moving-horizon observer"),
        ("track-discrete", "track anonymized agents (batch or moving horizon)"),
    ):
        sub.add_parser(name, parents=[common], help=help_)
    m = sub.add_parser("metrics", parents=[common], help="compare two ensemble CSVs")
    m.add_argument("a", help="ensemble CSV")
    m.add_argument("b", help="ensemble CSV")
    m.add_argument("--n-dirs", type=int, default=200)
    return p


def resolve_config(args) -> ScenarioConfig:
    cfg = _scenario(args.scenario) if args.scenario else ScenarioConfig()
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"cannot read config {args.config}: {exc}"]) from exc
        if not isinstance(data, dict):
            raise ConfigError(["config must be a JSON object"])
        if "scenario" in data and not args.scenario and data["scenario"] in {c.scenario for c in built_in_scenarios()}:
            cfg = _scenario(data["scenario"])
        cfg = ScenarioConfig.from_dict(data, base=cfg)
    overrides = {}
    for key in ("seed", "out", "bins", "solver"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = v
    if args.command in COMMANDS:
        overrides["command"] = args.command
    return dataclasses.replace(cfg, **overrides)


def _run_metrics(args) -> int:
    a = csvio.read_ensemble(args.a)
    b = csvio.read_ensemble(args.b)
    seed = args.seed or 0
    value = sliced_w1(a, b, args.n_dirs, seed)
    print(f"sliced_w1,{value!r},n_dirs={args.n_dirs}")
    for k in range(a.dim):
        print(f"w1_x{k + 1},{w1_samples_1d(a.particles[:, k], b.particles[:, k], seed=seed)!r}")
        print(f"tv_x{k + 1},{tv_on_grid(a.particles[:, k], b.particles[:, k], args.bins or 50)!r}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        csvio.write_metrics(Path(args.out) / "metrics.csv", [(a.time, value, None)])
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.list_scenarios:
        for cfg in built_in_scenarios():
            print(f"{cfg.scenario}\t{cfg.command}")
        return EXIT_OK
    if args.command is None:
        _parser().print_help()
        return EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    threads = os.environ.get("ENSOBS_THREADS")
    limiter = None
    if threads:
        from threadpoolctl import threadpool_limits

        try:
            limiter = threadpool_limits(int(threads))
        except ValueError:
            print(f"error: ENSOBS_THREADS must be an integer, got {threads!r}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        if args.command == "metrics":
            return _run_metrics(args)
        try:
            cfg = resolve_config(args)
            if args.dump_config:
                print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
                return EXIT_OK
            files = run_scenario(cfg, timings=args.timings)
        except ConfigError as exc:
            print("error: invalid configuration", file=sys.stderr)
            for problem in exc.problems:
                print(f"  - {problem}", file=sys.stderr)
            return EXIT_CONFIG
        except DivergenceError as exc:
            print(f"error: numerical divergence in stage '{getattr(exc, 'stage', '?')}': {exc}", file=sys.stderr)
            return EXIT_DIVERGED
        for name, path in files.items():
            print(f"{name}\t{path}")
        return EXIT_OK
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
