import math

import numpy as np
import pytest
from scipy.stats import kstest

from ensobs.correction import CorrectionConfig, correct_along_direction
from ensobs.dynamics import Direction, ParticleEnsemble, double_integrator, flow, harmonic_oscillator, nonlinear_oscillator
from ensobs.estimator import MeasurementSnapshot, simulate_snapshots
from ensobs.metrics import sliced_w1
from ensobs.observer import (
    HorizonBuffer,
    ObserverConfig,
    ObserverState,
    _angle_weights,
    backward_functional,
    direction_angles,
    horizon_for_spread,
    observer_step,
    run_observer,
    select_times,
)

from conftest import bimodal


def snap(t, n=3):
    return MeasurementSnapshot(t, np.arange(n, dtype=float))


class TestBuffer:
    def test_window_discipline(self):
        buf = HorizonBuffer(1.0, [snap(t) for t in np.round(np.arange(0, 30) * 0.1, 10)])
        buf.evict(2.9)
        assert buf.times.min() >= 2.9 - 1.0 - 1e-9
        assert len(buf) == 11

    def test_time_order_enforced(self):
        buf = HorizonBuffer(1.0, [snap(1.0)])
        with pytest.raises(ValueError):
            buf.append(snap(0.5))

    def test_positive_horizon(self):
        with pytest.raises(ValueError):
            HorizonBuffer(0.0)


class TestSelection:
    def test_backward_functional(self):
        np.testing.assert_allclose(backward_functional(double_integrator(), 1.0, 3.0), [1.0, -2.0], atol=1e-14)

    def test_angle_range_double_integrator(self):
        W = np.array([backward_functional(double_integrator(), tau, 0.0) for tau in np.linspace(-3, 0, 301)])
        spread = math.degrees(direction_angles(W)[-1])
        assert abs(spread - 71.565) <= 1e-3

    def test_horizon_for_85_degrees(self):
        assert horizon_for_spread(double_integrator(), math.radians(85.0)) == pytest.approx(11.43, abs=5e-3)

    def test_harmonic_weights_uniform(self):
        W = np.array([backward_functional(harmonic_oscillator(), tau, 0.0) for tau in np.linspace(-2, 0, 21)])
        w = _angle_weights(direction_angles(W))
        assert np.ptp(w) <= 1e-12

    def test_all_when_k_large(self):
        buf = HorizonBuffer(5.0, [snap(t) for t in (0.0, 0.5, 1.0)])
        assert select_times(buf, double_integrator(), 10) == [0.0, 0.5, 1.0]
        with pytest.raises(ValueError):
            select_times(HorizonBuffer(1.0), double_integrator(), 2)

    def test_distinct_sorted_deterministic(self):
        buf = HorizonBuffer(3.0, [snap(t) for t in np.round(np.arange(-30, 1) * 0.1, 10)])
        a = select_times(buf, double_integrator(), 10, seed=4, now=0.0)
        assert a == select_times(buf, double_integrator(), 10, seed=4, now=0.0)
        assert len(set(a)) == 10 and a == sorted(a)

    def test_angle_uniformity(self):
        sys = double_integrator()
        taus = np.round(np.linspace(-3.0, 0.0, 301), 10)
        buf = HorizonBuffer(3.0, [snap(t) for t in taus])
        top = math.atan(3.0)
        stats = []
        for seed in range(20):
            sel = np.array(select_times(buf, sys, 10, seed=seed, now=0.0))
            angles = np.arctan(-sel)
            stats.append(kstest(angles, "uniform", args=(0.0, top)).statistic)
        assert np.mean(stats) <= 0.2
        # time-uniform sampling would be visibly skewed towards large angles
        rng = np.random.default_rng(0)
        naive = [kstest(np.arctan(-rng.choice(taus, 10, replace=False)), "uniform", args=(0.0, top)).statistic for _ in range(20)]
        assert np.mean(stats) < np.mean(naive)


class TestStep:
    def test_prediction_only(self, rng):
        sys = double_integrator()
        ens = ParticleEnsemble(rng.standard_normal((100, 2)))
        st = ObserverState(ens, HorizonBuffer(1.0))
        for _ in range(5):
            st = observer_step(st, None, 0.3, sys)
        np.testing.assert_allclose(st.estimate.particles, flow(sys, ens, 1.5).particles, atol=1e-10)
        assert st.step == 5

    def test_current_snapshot_only(self, rng):
        sys = harmonic_oscillator()
        ens = ParticleEnsemble(rng.standard_normal((2000, 2)))
        y = 1.0 + 0.5 * rng.standard_normal(2000)
        cfg = ObserverConfig(k_times=3, correction=CorrectionConfig(rng_seed=11))
        st = observer_step(ObserverState(ens, HorizonBuffer(0.5), cfg), MeasurementSnapshot(0.2, y), 0.2, sys)
        pred = flow(sys, ens, 0.2)
        ref = correct_along_direction(pred, Direction([1.0, 0.0]), y, cfg.correction, (1, 0, 0))
        np.testing.assert_allclose(st.estimate.particles, ref.particles, atol=1e-14)
        assert st.last_selected == [0.2]

    def test_perfect_estimate_fixed_point(self):
        sys = double_integrator()
        truth = ParticleEnsemble(bimodal(3000, np.random.default_rng(2), std=0.3))
        times = np.round(np.arange(-20, 6) * 0.1, 10)
        snaps = simulate_snapshots(sys, truth, times, truth.size)
        pre = [s for s in snaps if s.time <= 0]
        post = [[s for s in snaps if s.time > 0]]
        (st,) = run_observer(sys, truth, post, 0.5, 2.0, ObserverConfig(), pre)
        ref = flow(sys, truth, 0.5)
        unchanged = np.all(np.abs(st.estimate.particles - ref.particles) <= 1e-9, axis=1).mean()
        assert unchanged >= 0.99
        assert sliced_w1(st.estimate, ref) <= 0.005

    def test_mass_and_window(self):
        sys = double_integrator()
        r = np.random.default_rng(3)
        truth = ParticleEnsemble(bimodal(500, r, std=0.3))
        snaps = simulate_snapshots(sys, truth, np.round(np.arange(-10, 20) * 0.1, 10), 500)
        batches = [[s for s in snaps if k * 0.5 < s.time <= (k + 1) * 0.5] for k in range(3)]
        init = ParticleEnsemble(r.uniform(-2, 2, (500, 2)))
        for st in run_observer(sys, init, batches, 0.5, 1.0, ObserverConfig(k_times=4), [s for s in snaps if s.time <= 0]):
            assert st.estimate.size == 500
            assert st.buffer.times.min() >= st.time - 1.0 - 1e-9
            assert len(st.last_selected) == 4

    def test_nonlinear_experimental(self):
        sys = nonlinear_oscillator(1e-2)
        r = np.random.default_rng(4)
        truth = ParticleEnsemble(bimodal(400, r, means=((-1.0, 0.5), (1.5, -0.5)), std=0.25))
        snaps = simulate_snapshots(sys, truth, [0.0, 0.1, 0.2, 0.3], 400)
        init = ParticleEnsemble(r.uniform(-2, 2, (400, 2)))
        st = ObserverState(init, HorizonBuffer(0.5, snaps[:1]), ObserverConfig(k_times=3))
        st = observer_step(st, snaps[1:], 0.3, sys)
        assert np.all(np.isfinite(st.estimate.particles))
        assert st.time == pytest.approx(0.3)
        assert sliced_w1(st.estimate, flow(sys, truth, 0.3)) < sliced_w1(flow(sys, init, 0.3), flow(sys, truth, 0.3))

    def test_bad_dt(self, rng):
        st = ObserverState(ParticleEnsemble(rng.standard_normal((5, 2))), HorizonBuffer(1.0))
        with pytest.raises(ValueError):
            observer_step(st, None, 0.0, double_integrator())
