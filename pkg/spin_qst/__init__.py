"""Continuous-measurement tomography of a qubit ensemble."""

from spin_qst.collective_spin import BlochVector, SymmetricState, spin_coherent
from spin_qst.errors import (
    AllCandidatesInvalidError,
    ConfigError,
    DimensionMismatchError,
    IntegrationInstabilityError,
    InvalidStateError,
    SpinQSTError,
    StepSizeError,
)
from spin_qst.estimator import EstimatorConfig, estimate_backaction_free, estimate_mle
from spin_qst.trajectory import ControlWaveform, MeasurementRecord, TrajectoryConfig, simulate_truth

__all__ = [
    "AllCandidatesInvalidError",
    "BlochVector",
    "ConfigError",
    "ControlWaveform",
    "DimensionMismatchError",
    "EstimatorConfig",
    "IntegrationInstabilityError",
    "InvalidStateError",
    "MeasurementRecord",
    "SpinQSTError",
    "StepSizeError",
    "SymmetricState",
    "TrajectoryConfig",
    "estimate_backaction_free",
    "estimate_mle",
    "simulate_truth",
    "spin_coherent",
]
