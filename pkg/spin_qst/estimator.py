"""
Maximum-likelihood reconstruction of the initial single-qubit state from one record.

Two stages against the SCS filter:

1. score a shell of mixed states (‖n‖ = shell_radius) against the maximally mixed
   reference n = 0 and keep the winner n*;
2. resample pure states in a cap around n*/‖n*‖, score them against that direction,
   and report the winner as the estimate.

The backaction-free baseline is a single stage over uniformly sampled pure states with
the first sample as its reference.
"""

from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.spatial import cKDTree

from spin_qst.collective_spin import BlochVector
from spin_qst.errors import AllCandidatesInvalidError, ConfigError, InvalidStateError
from spin_qst.likelihood import backaction_free_scores, scs_scores
from spin_qst.trajectory import ControlWaveform, MeasurementRecord

logger = logging.getLogger(__name__)

EstimatorKind = Literal["scs_mle", "backaction_free"]


# ==========================================
# 1. Config & report
# ==========================================

class EstimatorConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    m1_count: int = Field(250, ge=1, description="Mixed-state candidates on the stage-1 shell")
    m2_count: int = Field(250, ge=1, description="Pure-state candidates in the stage-2 cap")
    shell_radius: float = Field(0.75, gt=0.0, lt=1.0, description="Bloch norm of the stage-1 candidates")
    cap_half_angle: float = Field(
        math.pi / 4, gt=0.0, le=math.pi, description="Half opening angle of the stage-2 cap (radians)"
    )
    baseline_count: int = Field(1700, ge=1, description="Uniform pure samples of the backaction-free estimator")
    rng_seed: int = Field(0, description="Seed of the candidate sampling stream")


class StageTable(BaseModel):
    """Every candidate of one stage with its LLR against the stage reference."""

    stage: int = Field(description="1 or 2 for the SCS estimator, 0 for the backaction-free one")
    reference: tuple[float, float, float]
    candidates: list[tuple[float, float, float]]
    llr: list[float | None] = Field(description="λ(candidate, reference); None for excluded candidates")
    valid: list[bool]
    winner: int = Field(description="Index of the arg-max candidate")

    @property
    def n_invalid(self) -> int:
        return sum(1 for ok in self.valid if not ok)

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["candidate", "x", "y", "z", "llr", "valid"])
            for i, (vec, value, ok) in enumerate(zip(self.candidates, self.llr, self.valid)):
                writer.writerow([i, *(repr(c) for c in vec), "" if value is None else repr(value), int(ok)])


class EstimateReport(BaseModel):
    estimator_kind: EstimatorKind
    estimate: tuple[float, float, float] = Field(description="Unit Bloch vector n_ML")
    reference_stage1: tuple[float, float, float]
    winner_stage1: tuple[float, float, float]
    llr_tables: list[StageTable]
    n_invalid: int = Field(ge=0, description="Candidates excluded over all stages")

    @property
    def estimate_vector(self) -> BlochVector:
        return BlochVector(*self.estimate)


def _as_tuple(vec) -> tuple[float, float, float]:
    x, y, z = (float(c) for c in np.asarray(vec, dtype=float).reshape(3))
    return x, y, z


# ==========================================
# 2. Candidate sampling
# ==========================================

def sample_sphere(count: int, rng: np.random.Generator) -> np.ndarray:
    """`count` unit vectors uniform on S² as rows of a (count, 3) array."""
    if count < 1:
        raise ConfigError("sample count must be >= 1")
    draws = rng.standard_normal((count, 3))
    norms = np.linalg.norm(draws, axis=1)
    # a zero Gaussian triple has probability zero but would poison the batch
    while np.any(norms == 0.0):
        bad = norms == 0.0
        draws[bad] = rng.standard_normal((int(bad.sum()), 3))
        norms = np.linalg.norm(draws, axis=1)
    return draws / norms[:, None]


def sample_shell(count: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Isotropic mixed states of Bloch norm `radius`."""
    if not 0.0 < radius < 1.0:
        raise ConfigError(f"shell radius must lie in (0, 1), got {radius}")
    return radius * sample_sphere(count, rng)


def _orthonormal_frame(center: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(center)))] = 1.0
    e1 = np.cross(center, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(center, e1)
    return e1, e2


def sample_cap(count: int, center: BlochVector, half_angle: float, rng: np.random.Generator) -> np.ndarray:
    """Unit vectors uniform in area over {n : n·center ≥ cos(half_angle)}."""
    if count < 1:
        raise ConfigError("sample count must be >= 1")
    if not center.is_pure():
        raise InvalidStateError("cap center must be a unit Bloch vector")
    if not 0.0 < half_angle <= math.pi:
        raise ConfigError(f"cap half angle must lie in (0, π], got {half_angle}")
    c = center.as_array()
    e1, e2 = _orthonormal_frame(c)
    # cos of the polar angle is uniform on [cos h, 1] for area-uniform caps
    cos_alpha = rng.uniform(math.cos(half_angle), 1.0, count)
    sin_alpha = np.sqrt(np.clip(1.0 - cos_alpha**2, 0.0, None))
    azimuth = rng.uniform(0.0, 2.0 * math.pi, count)
    samples = (
        cos_alpha[:, None] * c
        + (sin_alpha * np.cos(azimuth))[:, None] * e1
        + (sin_alpha * np.sin(azimuth))[:, None] * e2
    )
    return samples / np.linalg.norm(samples, axis=1)[:, None]


# ==========================================
# 3. Estimators
# ==========================================

def _argmax_valid(llr: np.ndarray, valid: np.ndarray, stage: int) -> int:
    if not valid.any():
        raise AllCandidatesInvalidError(f"all {valid.size} stage-{stage} candidates failed to propagate")
    # np.argmax returns the first maximum, so ties go to the lowest index
    return int(np.argmax(np.where(valid, llr, -np.inf)))


def _table(stage: int, reference, candidates: np.ndarray, llr: np.ndarray, valid: np.ndarray, winner: int) -> StageTable:
    return StageTable(
        stage=stage,
        reference=_as_tuple(reference),
        candidates=[_as_tuple(c) for c in candidates],
        llr=[float(v) if ok else None for v, ok in zip(llr, valid)],
        valid=[bool(ok) for ok in valid],
        winner=winner,
    )


def _scs_stage(record, waveform, candidates: np.ndarray, reference: np.ndarray, stage: int) -> StageTable:
    scores, valid = scs_scores(record, np.vstack([reference[None, :], candidates]), waveform)
    if not valid[0]:
        raise AllCandidatesInvalidError(f"stage-{stage} reference failed to propagate")
    llr = scores[1:] - scores[0]
    valid = valid[1:]
    winner = _argmax_valid(llr, valid, stage)
    table = _table(stage, reference, candidates, llr, valid, winner)
    logger.debug(
        "--- [Estimator] stage %d: best λ=%.4f, %d/%d excluded", stage, llr[winner], table.n_invalid, valid.size
    )
    return table


def estimate_mle(
    record: MeasurementRecord,
    waveform: ControlWaveform,
    config: EstimatorConfig,
    rng: np.random.Generator | None = None,
) -> EstimateReport:
    """Two-stage SCS maximum-likelihood estimate; deterministic in (record, waveform, seed)."""
    rng = np.random.default_rng(config.rng_seed) if rng is None else rng

    # [Action]: 第一步，半径 r 的混态壳层，参考态是完全混态 (零向量)
    shell = sample_shell(config.m1_count, config.shell_radius, rng)
    first = _scs_stage(record, waveform, shell, np.zeros(3), stage=1)
    winner1 = shell[first.winner]

    # [Action]: 第二步，在第一步胜者方向的帽区里取纯态，参考态换成归一化的胜者
    center = BlochVector.from_array(winner1).normalized()
    cap = sample_cap(config.m2_count, center, config.cap_half_angle, rng)
    second = _scs_stage(record, waveform, cap, center.as_array(), stage=2)

    return EstimateReport(
        estimator_kind="scs_mle",
        estimate=_as_tuple(cap[second.winner]),
        reference_stage1=(0.0, 0.0, 0.0),
        winner_stage1=_as_tuple(winner1),
        llr_tables=[first, second],
        n_invalid=first.n_invalid + second.n_invalid,
    )


def estimate_backaction_free(
    record: MeasurementRecord,
    waveform: ControlWaveform,
    config: EstimatorConfig,
    rng: np.random.Generator | None = None,
) -> EstimateReport:
    """Single-stage baseline: arg-max over uniform pure states, first sample as reference."""
    rng = np.random.default_rng(config.rng_seed) if rng is None else rng
    samples = sample_sphere(config.baseline_count, rng)
    scores = backaction_free_scores(record, samples, waveform)
    # 第一个样本充当参考态
    llr = scores - scores[0]
    valid = np.ones(samples.shape[0], dtype=bool)
    winner = int(np.argmax(llr))
    table = _table(0, samples[0], samples, llr, valid, winner)
    return EstimateReport(
        estimator_kind="backaction_free",
        estimate=_as_tuple(samples[winner]),
        reference_stage1=_as_tuple(samples[0]),
        winner_stage1=_as_tuple(samples[winner]),
        llr_tables=[table],
        n_invalid=0,
    )


ESTIMATORS = {
    "scs_mle": estimate_mle,
    "backaction_free": estimate_backaction_free,
}


def run_estimator(kind: EstimatorKind, record, waveform, config, rng=None) -> EstimateReport:
    try:
        estimator = ESTIMATORS[kind]
    except KeyError:
        raise ConfigError(f"unknown estimator kind {kind!r}; choose from {sorted(ESTIMATORS)}") from None
    return estimator(record, waveform, config, rng)


def estimate_history(
    record: MeasurementRecord,
    waveform: ControlWaveform,
    config: EstimatorConfig,
    times,
    kind: EstimatorKind = "scs_mle",
) -> list[tuple[float, EstimateReport]]:
    """Estimates from the record truncated at each time; every call reuses config.rng_seed."""
    history = []
    for t in times:
        n_steps = int(round(float(t) / record.dt))
        if n_steps < 1 or n_steps > record.n_steps:
            raise ConfigError(f"history time {t} lies outside (0, {record.total_time}]")
        report = run_estimator(kind, record.truncated(n_steps), waveform, config)
        history.append((n_steps * record.dt, report))
        logger.info("--- [Estimator] %s estimate at t=%.4f: %s", kind, n_steps * record.dt, report.estimate)
    return history


# ==========================================
# 4. Reference figures
# ==========================================

def sample_density_check(
    count: int,
    mode: Literal["cap", "sphere"] = "sphere",
    rng: np.random.Generator | None = None,
    half_angle: float = math.pi / 4,
) -> float:
    """Mean over samples of the infidelity to the nearest other sample.

    For pure qubits 1 − F = (1 − n·m)/2 = ‖n − m‖²/4, so the nearest neighbour in chord
    distance is also the nearest in infidelity.
    """
    if count < 2:
        raise ConfigError("density check needs at least two samples")
    rng = np.random.default_rng(0) if rng is None else rng
    if mode == "sphere":
        points = sample_sphere(count, rng)
    elif mode == "cap":
        points = sample_cap(count, BlochVector(0.0, 0.0, 1.0), half_angle, rng)
    else:
        raise ConfigError(f"unknown density mode {mode!r}")
    distances, _ = cKDTree(points).query(points, k=2)
    return float(np.mean(distances[:, 1] ** 2 / 4.0))


def optimal_povm_infidelity(num_qubits: int) -> float:
    """Best achievable mean infidelity 1/(N+2) for a pure qubit from N copies."""
    if num_qubits < 1:
        raise ConfigError("num_qubits must be >= 1")
    return 1.0 / (num_qubits + 2)
