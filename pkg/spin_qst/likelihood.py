"""
Log-likelihood ratios of candidate initial conditions against one measurement record.

For a diffusion dx = m(θ, t, x) dt + dw the ratio of path likelihoods between two models is

    λ(θ1, θ2) = Σ_i (m1_i − m2_i) dx_i − ½ Σ_i (m1_i² − m2_i²) Δt,

with every m evaluated at the left endpoint of its increment (Itô). We compute it as the
difference of per-model scores S(m) = Σ m dx − ½ Σ m² Δt, so λ(θ, θ) is exactly zero, the
ratio is exactly antisymmetric, and changing the reference shifts all candidates by one
common constant. Λ = exp(λ) is never formed.

The finite-Δt Gaussian density of the record is *not* a usable objective: per step it reads

    ln p_i = −(dx_i − m_i Δt)² / (2Δt) − ½ ln(2πΔt),

and the term that depends on the model, (m1_i − m2_i) dx_i − ½(m1_i² − m2_i²)Δt, is O(√Δt)
against O(1) shot-noise terms; `gaussian_step_log_density` is kept to demonstrate exactly that.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from spin_qst.collective_spin import BlochVector, SymmetricState
from spin_qst.errors import DimensionMismatchError, IntegrationInstabilityError, InvalidStateError
from spin_qst.trajectory import (
    ControlSchedule,
    ControlWaveform,
    MeasurementRecord,
    propagate_cse,
    propagate_scs_batch,
)

logger = logging.getLogger(__name__)

SCORE_CHUNK = 256


@dataclass(frozen=True, eq=False)
class MeanSignalSeries:
    """Drift m(θ, t_i) sampled at the left endpoint of every record increment."""

    values: np.ndarray
    dt: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise InvalidStateError("mean signal must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_z(cls, z, record: MeasurementRecord) -> MeanSignalSeries:
        """m = √κ (N/2) z for a single-qubit z(t) series."""
        return cls(math.sqrt(record.kappa) * 0.5 * record.num_qubits * np.asarray(z), record.dt)

    @classmethod
    def from_jz(cls, jz, record: MeasurementRecord) -> MeanSignalSeries:
        """m = √κ ⟨Jz⟩ for a collective expectation series."""
        return cls(math.sqrt(record.kappa) * np.asarray(jz), record.dt)


@dataclass(frozen=True)
class LLRValue:
    value: float
    candidate_id: int | str = 0
    reference_id: int | str = "ref"
    valid: bool = True

    def __post_init__(self):
        if self.valid and not math.isfinite(self.value):
            raise InvalidStateError("a valid LLR must be finite")


# ==========================================
# 1. General Itô-sum ratio
# ==========================================

def _check_length(record: MeasurementRecord, values: np.ndarray) -> None:
    if values.shape[-1] != record.n_steps:
        raise DimensionMismatchError(
            f"signal has {values.shape[-1]} samples, record has {record.n_steps} increments"
        )


def signal_score(record: MeasurementRecord, values) -> np.ndarray:
    """S(m) = Σ m dy − ½ Σ m² Δt; accepts a single series or a (K, n) stack."""
    values = np.asarray(values, dtype=float)
    _check_length(record, values)
    # row-wise sums keep each score independent of the batch it was computed in
    return np.sum(values * record.increments, axis=-1) - 0.5 * np.sum(values * values, axis=-1) * record.dt


def llr_general(record: MeasurementRecord, m1: MeanSignalSeries, m2: MeanSignalSeries) -> LLRValue:
    for series in (m1, m2):
        _check_length(record, series.values)
        if series.dt != record.dt:
            raise DimensionMismatchError("mean signal and record use different time steps")
    value = float(signal_score(record, m1.values) - signal_score(record, m2.values))
    return LLRValue(value=value, candidate_id=1, reference_id=2)


def gaussian_step_log_density(record: MeasurementRecord, m: MeanSignalSeries) -> np.ndarray:
    """Per-step finite-Δt Gaussian log-density of the increments under drift m (diagnostic only)."""
    _check_length(record, m.values)
    dt = record.dt
    residual = record.increments - m.values * dt
    return -(residual**2) / (2.0 * dt) - 0.5 * math.log(2.0 * math.pi * dt)


# ==========================================
# 2. Spin-model ratios
# ==========================================

def scs_scores(record: MeasurementRecord, blochs, waveform: ControlWaveform) -> tuple[np.ndarray, np.ndarray]:
    """Scores of K Bloch-vector initial conditions under the SCS filter, plus validity flags."""
    path = propagate_scs_batch(record, blochs, waveform)
    scale = math.sqrt(record.kappa) * 0.5 * record.num_qubits
    scores = np.full(path.valid.shape[0], np.nan)
    if path.valid.any():
        scores[path.valid] = signal_score(record, scale * path.z[path.valid])
    return scores, path.valid


def backaction_free_scores(record: MeasurementRecord, blochs, waveform: ControlWaveform) -> np.ndarray:
    """Scores of K unit Bloch vectors when ⟨Jz⟩ is replaced by (N/2)(R(t)n)·e_z."""
    blochs = np.asarray(blochs, dtype=float).reshape(-1, 3)
    if np.any(np.abs(np.linalg.norm(blochs, axis=1) - 1.0) > 1e-9):
        raise InvalidStateError("backaction-free candidates must be unit vectors")
    h = ControlSchedule(waveform, record.dt, record.n_steps).heisenberg_z
    scale = math.sqrt(record.kappa) * 0.5 * record.num_qubits
    scores = np.empty(blochs.shape[0])
    for start in range(0, blochs.shape[0], SCORE_CHUNK):
        chunk = blochs[start : start + SCORE_CHUNK]
        z = np.outer(chunk[:, 0], h[:, 0]) + np.outer(chunk[:, 1], h[:, 1]) + np.outer(chunk[:, 2], h[:, 2])
        scores[start : start + SCORE_CHUNK] = signal_score(record, scale * z)
    return scores


def llr_scs(
    record: MeasurementRecord,
    candidate: BlochVector,
    reference: BlochVector,
    waveform: ControlWaveform,
) -> LLRValue:
    """λ_scs(candidate, reference); invalid when either SCS propagation breaks down."""
    scores, valid = scs_scores(record, np.stack([candidate.as_array(), reference.as_array()]), waveform)
    if not valid.all():
        return LLRValue(value=math.nan, candidate_id="candidate", reference_id="reference", valid=False)
    return LLRValue(value=float(scores[0] - scores[1]), candidate_id="candidate", reference_id="reference")


def llr_backaction_free(
    record: MeasurementRecord,
    candidate: BlochVector,
    reference: BlochVector,
    waveform: ControlWaveform,
) -> LLRValue:
    scores = backaction_free_scores(record, np.stack([candidate.as_array(), reference.as_array()]), waveform)
    return LLRValue(value=float(scores[0] - scores[1]), candidate_id="candidate", reference_id="reference")


def llr_exact(
    record: MeasurementRecord,
    candidate: SymmetricState,
    reference: SymmetricState,
    waveform: ControlWaveform,
) -> LLRValue:
    """λ with exact CSE expectation values; meant for small-N cross-checks."""
    scores = []
    for state in (candidate, reference):
        try:
            path = propagate_cse(record, state, waveform)
        except IntegrationInstabilityError as exc:
            logger.debug("--- [Likelihood] exact CSE candidate rejected: %s", exc)
            return LLRValue(value=math.nan, candidate_id="candidate", reference_id="reference", valid=False)
        scores.append(signal_score(record, math.sqrt(record.kappa) * path.jz))
    return LLRValue(value=float(scores[0] - scores[1]), candidate_id="candidate", reference_id="reference")
