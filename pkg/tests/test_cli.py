import dataclasses
import json

import numpy as np
import pytest

from ensobs import csvio
from ensobs.cli import ConfigError, ScenarioConfig, built_in_scenarios, main, measurement_schedule, measurement_times, run_scenario, simulate
from ensobs.discrete import AnonymizedSnapshot
from ensobs.dynamics import ParticleEnsemble
from ensobs.estimator import MeasurementSnapshot


def by_name(name):
    return {c.scenario: c for c in built_in_scenarios()}[name]


def small(name, tmp_path, **kw):
    cfg = by_name(name)
    return dataclasses.replace(cfg, out=str(tmp_path / name), **kw)


class TestConfig:
    def test_six_valid_scenarios(self):
        cfgs = built_in_scenarios()
        assert len(cfgs) == 6
        assert len({c.scenario for c in cfgs}) == 6
        for c in cfgs:
            c.validate()

    def test_invalid_collects_problems(self):
        cfg = ScenarioConfig(
            N=0,
            solver="simplex",
            truth={"weights": [0.7], "means": [[0.0, 0.0]], "covariances": [[[1.0, 2.0], [2.0, 1.0]]]},
        )
        with pytest.raises(ConfigError) as info:
            cfg.validate()
        text = " ".join(info.value.problems)
        for fragment in ("N must", "solver", "sum to 1", "positive definite", "snapshot times"):
            assert fragment in text

    def test_asymmetric_covariance(self):
        cfg = dataclasses.replace(by_name("harmonic-bimodal"), truth={"weights": [1.0], "means": [[0, 0]], "covariances": [[[1, 0.1], [0, 1]]]})
        with pytest.raises(ConfigError, match="symmetric"):
            cfg.validate()

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            ScenarioConfig.from_dict({"bogus": 1})

    def test_dict_round_trip(self):
        for c in built_in_scenarios():
            assert ScenarioConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c


class TestTiming:
    def test_mhe_times(self):
        cfg = by_name("double-integrator-mhe")
        times = measurement_times(cfg)
        pre, batches = measurement_schedule(cfg, [MeasurementSnapshot(t, [0.0]) for t in times])
        assert [s.time for s in pre] == list(np.round(np.arange(-30, 0) * 0.1, 10))
        assert [s.time for s in batches[0]] == [0.0, 0.1, 0.2, 0.3, 0.4]
        # at t = 0.5 the window holds t - 0.1k for k = 1..30
        window = [s.time for s in pre + batches[0] if s.time >= 0.5 - 3.0 - 1e-9]
        assert np.allclose(window, 0.5 - 0.1 * np.arange(30, 0, -1))

    def test_discrete_noisy_times(self):
        cfg = by_name("discrete-noisy")
        pre, batches = measurement_schedule(cfg, [MeasurementSnapshot(t, [0.0]) for t in measurement_times(cfg)])
        assert len(pre) == 11 and all(len(b) == 1 for b in batches)
        assert batches[0][0].time == pytest.approx(0.1)


class TestCsv:
    def test_ensemble_round_trip(self, tmp_path, rng):
        ens = ParticleEnsemble(rng.standard_normal((50, 3)) * 1e-7 + np.pi, 0.1 + 0.2)
        p = csvio.write_ensemble(tmp_path / "e.csv", ens)
        back = csvio.read_ensemble(p)
        np.testing.assert_array_equal(back.particles, ens.particles)
        assert back.time == ens.time
        assert p.read_text().splitlines()[0] == "id,x1,x2,x3,t"
        csvio.write_ensemble(tmp_path / "f.csv", back)
        assert (tmp_path / "f.csv").read_bytes() == p.read_bytes()

    def test_snapshot_round_trip(self, tmp_path, rng):
        snaps = [MeasurementSnapshot(t, rng.standard_normal(5)) for t in (0.0, 0.1, 1 / 3)]
        p = csvio.write_snapshots(tmp_path / "s.csv", snaps)
        back = csvio.read_snapshots(p)
        for a, b in zip(snaps, back):
            assert a.time == b.time
            np.testing.assert_array_equal(a.samples, b.samples)
        anon = csvio.read_snapshots(p, anonymized=True)
        assert isinstance(anon[0], AnonymizedSnapshot)

    def test_tracks_and_metrics_round_trip(self, tmp_path, rng):
        steps = [ParticleEnsemble(rng.standard_normal((4, 2)), t) for t in (0.0, 0.1)]
        back = csvio.read_tracks(csvio.write_tracks(tmp_path / "t.csv", steps))
        for a, b in zip(steps, back):
            np.testing.assert_array_equal(a.particles, b.particles)
        rows = [(0.5, 0.25, None), (1.0, 0.125, 3.5)]
        assert csvio.read_metrics(csvio.write_metrics(tmp_path / "m.csv", rows)) == rows

    def test_bad_header(self, tmp_path):
        (tmp_path / "x.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            csvio.read_ensemble(tmp_path / "x.csv")
        with pytest.raises(ValueError):
            csvio.read_snapshots(tmp_path / "x.csv")


class TestRun:
    def test_estimate_artifacts_deterministic(self, tmp_path):
        a = run_scenario(small("harmonic-bimodal", tmp_path / "a", N=300, M=300))
        b = run_scenario(small("harmonic-bimodal", tmp_path / "b", N=300, M=300))
        for key in ("truth", "snapshots", "estimate", "metrics", "plot"):
            assert a[key].read_bytes() == b[key].read_bytes(), key
        assert csvio.read_ensemble(a["estimate"]).size == 300

    def test_observe(self, tmp_path):
        files = run_scenario(small("double-integrator-mhe", tmp_path, N=300, M=300))
        rows = csvio.read_metrics(files["metrics"])
        assert [round(r[0], 9) for r in rows] == [0.5, 1.0, 1.5]
        assert all(r[2] is None for r in rows)
        assert (tmp_path / "double-integrator-mhe" / "estimate_step003.csv").exists()

    def test_track_discrete_batch(self, tmp_path):
        files = run_scenario(small("discrete-5", tmp_path))
        (tracks,) = csvio.read_tracks(files["tracks"])
        assert tracks.size == 5
        assert csvio.read_metrics(files["metrics"])[0][1] <= 1e-6

    def test_track_discrete_online(self, tmp_path):
        files = run_scenario(small("discrete-noisy", tmp_path, steps=5))
        assert len(csvio.read_tracks(files["tracks"])) == 6

    def test_nonlinear_estimate(self, tmp_path):
        files = run_scenario(small("nonlinear-oscillator", tmp_path, N=200, M=200, sweeps=1, times=[0.0, 0.5]))
        assert np.all(np.isfinite(csvio.read_ensemble(files["estimate"]).particles))

    def test_simulate(self, tmp_path):
        files = run_scenario(small("harmonic-bimodal", tmp_path, N=100, M=40), command="simulate")
        snaps = csvio.read_snapshots(files["snapshots"])
        assert len(snaps) == 8 and all(len(s) == 40 for s in snaps)
        assert "estimate" not in files

    def test_simulate_points_anonymized(self, tmp_path):
        cfg = small("discrete-noisy", tmp_path)
        snaps = simulate(cfg, anonymized=True)
        assert all(len(s) == 5 for s in snaps)


class TestMain:
    def test_dump_config(self, capsys):
        assert main(["estimate", "--scenario", "harmonic-bimodal", "--seed", "7", "--dump-config"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["seed"] == 7 and data["scenario"] == "harmonic-bimodal"

    @pytest.mark.filterwarnings("ignore::ensobs.transport.ConvergenceWarning")
    def test_config_file_and_flags(self, tmp_path, capsys):
        cfg = dict(by_name("harmonic-bimodal").to_dict(), N=200, M=200)
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        code = main(["estimate", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o"), "--bins", "30", "--solver", "sinkhorn"])
        assert code == 0
        written = json.loads((tmp_path / "o" / "config.json").read_text())
        assert written["bins"] == 30 and written["solver"] == "sinkhorn" and written["N"] == 200

    def test_invalid_config_exit(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"N": -1}))
        assert main(["estimate", "--config", str(tmp_path / "c.json")]) == 2
        assert "N must" in capsys.readouterr().err

    def test_unreadable_config(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text("{not json")
        assert main(["estimate", "--config", str(tmp_path / "c.json")]) == 2

    def test_divergence_exit(self, tmp_path, capsys):
        cfg = {
            "system": {"A": [[50.0, 0.0], [0.0, 50.0]], "C": [[1.0, 0.0]]},
            "times": [0.0, 20.0],
            "N": 50,
            "M": 50,
            "out": str(tmp_path / "o"),
        }
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        code = main(["estimate", "--config", str(tmp_path / "c.json")])
        err = capsys.readouterr().err
        assert code == 3 and "divergence" in err and "simulate" in err

    def test_metrics_command(self, tmp_path, capsys, rng):
        a = csvio.write_ensemble(tmp_path / "a.csv", ParticleEnsemble(rng.standard_normal((100, 2))))
        assert main(["metrics", str(a), str(a)]) == 0
        assert capsys.readouterr().out.startswith("sliced_w1,0.0")

    def test_threads_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ENSOBS_THREADS", "1")
        assert main(["simulate", "--scenario", "discrete-5", "--out", str(tmp_path)]) == 0
        monkeypatch.setenv("ENSOBS_THREADS", "many")
        assert main(["simulate", "--scenario", "discrete-5", "--out", str(tmp_path)]) == 2

    def test_list(self, capsys):
        assert main(["--list-scenarios"]) == 0
        assert len(capsys.readouterr().out.strip().splitlines()) == 6


def test_unknown_keys_reported_with_invalid_values():
    base = built_in_scenarios()[0]
    with pytest.raises(ConfigError) as exc:
        ScenarioConfig.from_dict({"bogus": 1, "N": -1}, base=base)
    text = "\n".join(exc.value.problems)
    assert "unknown key 'bogus'" in text and "N must be" in text
