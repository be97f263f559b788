"""
Monte Carlo estimator campaigns.

For every (N, trial): draw a uniform true Bloch vector, generate one record with the
exact CSE, run the requested estimators on it, and score 1 − F. The trials are fanned
out over the map-reduce graph; rows are sorted by (N, trial, kind) before anything is
aggregated or written, so results do not depend on the worker count.
"""

from __future__ import annotations

import logging
import math
import time
from pathlib import Path
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from spin_qst import seeds
from spin_qst.collective_spin import BlochVector, qubit_fidelity
from spin_qst.errors import ConfigError, SpinQSTError
from spin_qst.estimator import EstimatorConfig, EstimatorKind, optimal_povm_infidelity, run_estimator, sample_sphere
from spin_qst.fitting import PowerLawFit, fit_power_law
from spin_qst.graph import build_trial_graph, run_trial_graph, write_graph_diagram
from spin_qst.io import write_csv, write_json
from spin_qst.trajectory import GRID_TOL, ControlWaveform, TrajectoryConfig, random_waveform, simulate_truth

logger = logging.getLogger(__name__)

ROWS_HEADER = (
    "N", "trial", "truth_x", "truth_y", "truth_z", "est_x", "est_y", "est_z", "infidelity", "kind", "n_invalid",
)
FAILURE_BUDGET = 0.05


# ==========================================
# 1. Config & result models
# ==========================================

class CampaignConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    qubit_counts: list[int] = Field([10], min_length=1, description="Ensemble sizes N")
    trials_per_n: int = Field(5, ge=1, description="Trials ν per N, one record per true state")
    num_rotations: int = Field(40, ge=0, description="Random π/2 rotations of the control law")
    larmor: float = Field(25 * math.pi, gt=0.0, description="Control Larmor frequency Ω_b in units of κ")
    total_time: float = Field(0.8, gt=0.0, description="Final time T in units of 1/κ")
    dt: float = Field(1e-4, gt=0.0, description="Integration step in units of 1/κ")
    kappa: float = Field(1.0, gt=0.0)
    max_norm_drift: float = Field(1e-3, gt=0.0)
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)
    estimator_kinds: list[EstimatorKind] = Field(["scs_mle"], min_length=1)
    fresh_waveform_per_trial: bool = Field(
        False, description="Draw a new control law for every trial instead of one shared law"
    )
    master_seed: int = 0

    @field_validator("qubit_counts")
    @classmethod
    def _positive_counts(cls, counts: list[int]) -> list[int]:
        if any(n < 1 for n in counts):
            raise ConfigError("every qubit count must be >= 1")
        return counts

    @model_validator(mode="after")
    def _check_timing(self) -> CampaignConfig:
        if self.num_rotations:
            expected = self.num_rotations * math.pi / (2.0 * self.larmor)
            if abs(expected - self.total_time) > 1e-9 * max(1.0, self.total_time):
                raise ConfigError(
                    f"{self.num_rotations} rotations at Ω_b={self.larmor} last {expected}, not T={self.total_time}"
                )
            per_segment = math.pi / (2.0 * self.larmor) / self.dt
            if abs(per_segment - round(per_segment)) > GRID_TOL:
                raise ConfigError(f"segment duration is {per_segment} steps of dt={self.dt}, not a whole number")
        steps = self.total_time / self.dt
        if abs(steps - round(steps)) > GRID_TOL:
            raise ConfigError(f"total_time/dt = {steps} is not an integer")
        return self

    def trajectory_config(self, num_qubits: int) -> TrajectoryConfig:
        return TrajectoryConfig(
            num_qubits=num_qubits,
            kappa=self.kappa,
            total_time=self.total_time,
            dt=self.dt,
            rng_seed=self.master_seed,
            max_norm_drift=self.max_norm_drift,
        )


def full_campaign_config(**overrides) -> CampaignConfig:
    """Desk-scale scaling campaign: N ∈ {25, 55, 100}, ν = 200, both estimators."""
    values = {
        "qubit_counts": [25, 55, 100],
        "trials_per_n": 200,
        "estimator_kinds": ["scs_mle", "backaction_free"],
    }
    values.update(overrides)
    return CampaignConfig.model_validate(values)


class TrialRow(BaseModel):
    num_qubits: int
    trial: int
    kind: EstimatorKind
    truth: tuple[float, float, float]
    estimate: tuple[float, float, float] | None = None
    infidelity: float | None = Field(None, ge=0.0, le=1.0)
    n_invalid: int = 0
    wall_time: float = 0.0
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def csv_cells(self) -> list:
        est = self.estimate or (None, None, None)
        return [self.num_qubits, self.trial, *self.truth, *est, self.infidelity, self.kind, self.n_invalid]


class NAggregate(BaseModel):
    num_qubits: int
    kind: EstimatorKind
    n_trials: int = Field(description="Successful trials entering the mean")
    n_failed: int
    mean_infidelity: float | None
    std_error: float | None = Field(
        None, ge=0.0, description="sqrt(Var[1−F]/ν) with the sample variance; 0 for one trial, None for none"
    )
    optimal_bound: float


class CampaignResult(BaseModel):
    config: CampaignConfig
    rows: list[TrialRow]
    aggregates: list[NAggregate]
    fits: dict[str, PowerLawFit | None]

    @property
    def failed_fraction(self) -> float:
        return sum(r.failed for r in self.rows) / max(1, len(self.rows))

    def aggregate(self, num_qubits: int, kind: EstimatorKind) -> NAggregate:
        for agg in self.aggregates:
            if agg.num_qubits == num_qubits and agg.kind == kind:
                return agg
        raise KeyError((num_qubits, kind))


# ==========================================
# 2. Trial worker & reducer
# ==========================================

def waveform_for(config: CampaignConfig, num_qubits: int, trial: int, shared: ControlWaveform) -> ControlWaveform:
    if not config.fresh_waveform_per_trial:
        return shared
    return random_waveform(config.num_rotations, config.larmor, seeds.stream(config.master_seed, seeds.WAVEFORM, num_qubits, trial))


def shared_waveform(config: CampaignConfig) -> ControlWaveform:
    return random_waveform(config.num_rotations, config.larmor, seeds.shared_waveform_stream(config.master_seed))


def run_trial(config: CampaignConfig, num_qubits: int, trial: int, waveform: ControlWaveform) -> list[TrialRow]:
    """One truth record scored by every requested estimator; failures become rows with an error."""
    seed = config.master_seed
    truth = BlochVector.from_array(sample_sphere(1, seeds.stream(seed, seeds.TRUTH_STATE, num_qubits, trial))[0])
    truth_tuple = (truth.x, truth.y, truth.z)
    # [Action]: 用精确 CSE 生成这一条测量记录
    try:
        run = simulate_truth(
            truth,
            config.trajectory_config(num_qubits),
            waveform,
            seeds.stream(seed, seeds.TRUTH_NOISE, num_qubits, trial),
        )
    except SpinQSTError as exc:
        logger.warning("--- [Node: run_trial] N=%d trial=%d truth generation failed: %s", num_qubits, trial, exc)
        return [
            TrialRow(num_qubits=num_qubits, trial=trial, kind=kind, truth=truth_tuple, error=str(exc))
            for kind in config.estimator_kinds
        ]

    rows = []
    for kind in config.estimator_kinds:
        started = time.perf_counter()
        # [Setup]: 每个估计器拿到同一条候选随机流 (配对比较)
        rng = seeds.stream(seed, seeds.ESTIMATOR, num_qubits, trial)
        try:
            report = run_estimator(kind, run.record, waveform, config.estimator, rng)
        except SpinQSTError as exc:
            # 失败的试验也要留一行，计入 failed_fraction
            logger.warning("--- [Node: run_trial] N=%d trial=%d %s failed: %s", num_qubits, trial, kind, exc)
            rows.append(TrialRow(num_qubits=num_qubits, trial=trial, kind=kind, truth=truth_tuple, error=str(exc)))
            continue
        estimate = report.estimate_vector
        rows.append(
            TrialRow(
                num_qubits=num_qubits,
                trial=trial,
                kind=kind,
                truth=truth_tuple,
                estimate=report.estimate,
                infidelity=1.0 - qubit_fidelity(truth, estimate),
                n_invalid=report.n_invalid,
                wall_time=time.perf_counter() - started,
            )
        )
    return rows


def sort_rows(rows: Sequence[TrialRow]) -> list[TrialRow]:
    return sorted(rows, key=lambda r: (r.num_qubits, r.trial, r.kind))


def aggregate_rows(rows: Sequence[TrialRow], kinds: Sequence[str]) -> tuple[list[NAggregate], dict[str, PowerLawFit | None]]:
    aggregates: list[NAggregate] = []
    fits: dict[str, PowerLawFit | None] = {}
    for kind in kinds:
        ns, means = [], []
        for n in sorted({r.num_qubits for r in rows}):
            group = [r for r in rows if r.num_qubits == n and r.kind == kind]
            # 只有成功的试验进入均值
            values = np.array([r.infidelity for r in group if not r.failed], dtype=float)
            mean = float(values.mean()) if values.size else None
            stderr = None
            if values.size == 1:
                stderr = 0.0
            elif values.size > 1:
                stderr = float(math.sqrt(values.var(ddof=1) / values.size))
            aggregates.append(
                NAggregate(
                    num_qubits=n,
                    kind=kind,
                    n_trials=int(values.size),
                    n_failed=len(group) - int(values.size),
                    mean_infidelity=mean,
                    std_error=stderr,
                    optimal_bound=optimal_povm_infidelity(n),
                )
            )
            if mean is not None and mean > 0.0:
                ns.append(n)
                means.append(mean)
        fits[kind] = fit_power_law(ns, means) if len(ns) >= 3 else None
        if fits[kind] is not None:
            logger.info("--- [Campaign] %s fit: b = %.3f ± %.3f", kind, fits[kind].b, fits[kind].b_err)
    return aggregates, fits


# ==========================================
# 3. Campaign driver
# ==========================================

def run_campaign(
    config: CampaignConfig,
    estimator_kind: EstimatorKind | None = None,
    threads: int = 1,
    diagram: Path | None = None,
) -> CampaignResult:
    """Run every (N, trial) through the trial graph; `estimator_kind` narrows config.estimator_kinds."""
    if estimator_kind is not None:
        config = config.model_copy(update={"estimator_kinds": [estimator_kind]})
    waveform = shared_waveform(config)

    def plan(request: CampaignConfig) -> list[dict]:
        return [{"N": n, "trial": t} for n in request.qubit_counts for t in range(request.trials_per_n)]

    def work(task: dict) -> list[TrialRow]:
        n, t = task["N"], task["trial"]
        return run_trial(config, n, t, waveform_for(config, n, t, waveform))

    def reduce(rows: list[TrialRow]) -> CampaignResult:
        # [Check]: worker 完成顺序不固定，先排序再聚合，结果才与线程数无关
        ordered = sort_rows(rows)
        aggregates, fits = aggregate_rows(ordered, config.estimator_kinds)
        return CampaignResult(config=config, rows=ordered, aggregates=aggregates, fits=fits)

    graph = build_trial_graph(plan, work, reduce)
    if diagram is not None:
        write_graph_diagram(graph, diagram)
    num_tasks = len(config.qubit_counts) * config.trials_per_n
    logger.info("--- [Campaign] %d trials, estimators %s, %d threads", num_tasks, config.estimator_kinds, threads)
    return run_trial_graph(graph, config, num_tasks, threads, desc="campaign")


def write_campaign(result: CampaignResult, out_dir: Path, waveform: ControlWaveform | None = None) -> None:
    out_dir = Path(out_dir)
    write_csv(out_dir / "rows.csv", ROWS_HEADER, (r.csv_cells() for r in result.rows))
    write_json(
        out_dir / "aggregate.json",
        {
            "config": result.config.model_dump(mode="json"),
            "aggregates": [a.model_dump(mode="json") for a in result.aggregates],
            "failed_trials": sum(r.failed for r in result.rows),
        },
    )
    write_json(out_dir / "fit.json", {k: (v.model_dump() if v else None) for k, v in result.fits.items()})
    if waveform is not None:
        (out_dir / "waveform.json").write_text(waveform.to_json() + "\n")


def rows_from_csv(records: list[dict[str, str]]) -> list[TrialRow]:
    """Rebuild rows from rows.csv; rows with an empty infidelity are failed trials."""
    rows = []
    for rec in records:
        failed = rec["infidelity"] == ""
        rows.append(
            TrialRow(
                num_qubits=int(rec["N"]),
                trial=int(rec["trial"]),
                kind=rec["kind"],
                truth=(float(rec["truth_x"]), float(rec["truth_y"]), float(rec["truth_z"])),
                estimate=None if failed else (float(rec["est_x"]), float(rec["est_y"]), float(rec["est_z"])),
                infidelity=None if failed else float(rec["infidelity"]),
                n_invalid=int(rec["n_invalid"]),
                error="failed" if failed else None,
            )
        )
    return rows
