"""Broadband universal-rotation pulses with quadratic phase dispersion."""
from ._accel import BACKEND
from .ensemble import (
    EnsembleSpec,
    ScalingParams,
    TargetSet,
    build_ensemble,
    build_targets,
    phase_dispersion,
    scaling_from_bandwidth,
    target_rotation,
)
from .grape import (
    FidelityReport,
    OptimizerSettings,
    PropagatorCache,
    PulseWaveform,
    convergence_tolerance,
    fidelity,
    gradient,
    optimize,
    propagate,
)

__version__ = "0.1.0"
