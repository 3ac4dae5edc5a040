"""Ensemble state estimation from unlabeled output snapshots.

Particle-based reconstruction of initial state distributions by histogram
optimal-transport corrections, a moving-horizon observer, and sorting plus
Kaczmarz tracking for anonymized agents.
"""

from .correction import CorrectionConfig, CorrectionReport, correct_along_direction, correction_stream, unfolded_correct
from .discrete import (
    AnonymizedSnapshot,
    assign_1d,
    discrete_estimate,
    discrete_observe,
    kaczmarz_project,
    subsample_tracker,
)
from .dynamics import (
    DegenerateDirectionError,
    Direction,
    DivergenceError,
    LinearSystem,
    NonlinearSystem,
    ParticleEnsemble,
    double_integrator,
    flow,
    harmonic_oscillator,
    matrix_exponential,
    nonlinear_oscillator,
    output_samples,
    projection_direction,
)
from .estimator import InitSpec, MeasurementSnapshot, SweepSchedule, estimate_initial, simulate_snapshots
from .histogram import BinGrid, histogram, shared_grid
from .metrics import MetricReport, sliced_w1, tv_on_grid, w1_samples_1d
from .observer import HorizonBuffer, ObserverConfig, ObserverState, observer_step, run_observer, select_times
from .transport import TransportPlan, ot_1d_exact, sinkhorn, solve

__version__ = "0.1.0"
