"""
Physics studies built on the propagators:

- approximation study: exact CSE truth against the SCS filter on the same record, with and
  without controls, as fidelity and z-error time series averaged over random initial states;
- squeezing demo: one N-qubit run from the SCS along x, tracking ξ_T², the record, the mean
  spin and Q-function snapshots.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.stats import spearmanr

from spin_qst import seeds
from spin_qst.collective_spin import (
    BlochVector,
    build_ops,
    expect,
    fidelity,
    mean_spin,
    q_function,
    spin_coherent,
    squeezing_db,
    uniform_sphere_grid,
)
from spin_qst.errors import ConfigError, SpinQSTError
from spin_qst.estimator import sample_sphere
from spin_qst.graph import build_trial_graph, run_trial_graph, write_graph_diagram
from spin_qst.io import write_csv, write_json
from spin_qst.trajectory import (
    GRID_TOL,
    ControlWaveform,
    MeasurementRecord,
    TrajectoryConfig,
    propagate_scs_batch,
    random_waveform,
    rms_z_error,
    simulate_truth,
)

logger = logging.getLogger(__name__)


def _check_grid(total_time: float, dt: float, num_rotations: int, larmor: float) -> None:
    steps = total_time / dt
    if abs(steps - round(steps)) > GRID_TOL:
        raise ConfigError(f"total_time/dt = {steps} is not an integer")
    if num_rotations:
        expected = num_rotations * math.pi / (2.0 * larmor)
        if abs(expected - total_time) > 1e-9 * max(1.0, total_time):
            raise ConfigError(f"{num_rotations} rotations at Ω_b={larmor} last {expected}, not T={total_time}")


# ==========================================
# 1. SCS approximation quality
# ==========================================

class ApproxStudyConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    qubit_counts: list[int] = Field([1, 25, 50, 75, 100], min_length=1)
    trials: int = Field(100, ge=1, description="Random initial unit vectors per (N, controls) case")
    controls: list[bool] = Field([True, False], min_length=1, description="Cases to run: with and/or without controls")
    num_rotations: int = Field(40, ge=1)
    larmor: float = Field(25 * math.pi, gt=0.0)
    total_time: float = Field(0.8, gt=0.0)
    dt: float = Field(1e-4, gt=0.0)
    kappa: float = Field(1.0, gt=0.0)
    sample_every: int = Field(100, ge=1, description="Steps between fidelity samples")
    master_seed: int = 0

    @model_validator(mode="after")
    def _check_timing(self) -> ApproxStudyConfig:
        _check_grid(self.total_time, self.dt, self.num_rotations, self.larmor)
        if any(n < 1 for n in self.qubit_counts):
            raise ConfigError("every qubit count must be >= 1")
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.total_time / self.dt))

    @property
    def sample_steps(self) -> list[int]:
        steps = list(range(0, self.n_steps, self.sample_every))
        return steps + [self.n_steps]


class ApproxTrial(BaseModel):
    num_qubits: int
    with_controls: bool
    trial: int
    fidelity: list[float] = Field(description="|⟨Ψ(t)|SCS(n(t))⟩|² at the sample steps")
    exact_jz: list[float] = Field(description="Exact ⟨Jz⟩ at the sample steps")
    scs_z: list[float] = Field(description="SCS filter z(t) at the sample steps")
    error: str | None = None


class ApproxPoint(BaseModel):
    num_qubits: int
    with_controls: bool
    t: float
    mean_fidelity: float
    rms_z_error: float


class ApproxStudyResult(BaseModel):
    points: list[ApproxPoint]
    n_failed: int
    final_fidelity_rank_correlation: dict[str, float | None] = Field(
        description="Spearman ρ between N and the final-time mean fidelity, per controls case"
    )

    def series(self, num_qubits: int, with_controls: bool) -> list[ApproxPoint]:
        return [p for p in self.points if p.num_qubits == num_qubits and p.with_controls == with_controls]


def approx_trial(config: ApproxStudyConfig, num_qubits: int, with_controls: bool, trial: int, waveform: ControlWaveform) -> ApproxTrial:
    seed = config.master_seed
    truth = BlochVector.from_array(sample_sphere(1, seeds.stream(seed, seeds.TRUTH_STATE, num_qubits, trial))[0])
    waveform = waveform if with_controls else ControlWaveform.empty(config.larmor)
    traj = TrajectoryConfig(
        num_qubits=num_qubits, kappa=config.kappa, total_time=config.total_time, dt=config.dt, rng_seed=seed
    )
    sample_steps = config.sample_steps
    try:
        run = simulate_truth(
            truth, traj, waveform, seeds.stream(seed, seeds.TRUTH_NOISE, num_qubits, trial), snapshot_steps=sample_steps
        )
        path = propagate_scs_batch(run.record, truth.as_array()[None, :], waveform, snapshot_steps=sample_steps)
        if not path.valid[0]:
            raise SpinQSTError("SCS filter broke down on the truth record")
    except SpinQSTError as exc:
        logger.warning("--- [Node: run_trial] approx N=%d trial=%d failed: %s", num_qubits, trial, exc)
        return ApproxTrial(
            num_qubits=num_qubits, with_controls=with_controls, trial=trial,
            fidelity=[], exact_jz=[], scs_z=[], error=str(exc),
        )

    jz_op = build_ops(num_qubits).jz
    fidelities, exact_jz, scs_z = [], [], []
    # 在每个采样时刻比较精确态和 SCS 近似
    for step in sample_steps:
        state = run.snapshots[step]
        direction = BlochVector.from_array(path.snapshots[step][0]).normalized()
        fidelities.append(fidelity(state, spin_coherent(direction, num_qubits)))
        exact_jz.append(expect(state, jz_op))
        scs_z.append(float(path.snapshots[step][0, 2]))
    return ApproxTrial(
        num_qubits=num_qubits, with_controls=with_controls, trial=trial, fidelity=fidelities,
        exact_jz=exact_jz, scs_z=scs_z,
    )


def _rank_correlation(points: list[ApproxPoint], with_controls: bool) -> float | None:
    final = {}
    for p in points:
        if p.with_controls == with_controls:
            final[p.num_qubits] = p.mean_fidelity  # points are time-ordered, so the last one wins
    if len(final) < 3:
        return None
    ns = sorted(final)
    rho = spearmanr(ns, [final[n] for n in ns]).statistic
    return None if not np.isfinite(rho) else float(rho)


def summarize_approx(trials: list[ApproxTrial], config: ApproxStudyConfig) -> ApproxStudyResult:
    times = [step * config.dt for step in config.sample_steps]
    points = []
    n_failed = sum(t.error is not None for t in trials)
    for n in config.qubit_counts:
        for controls in config.controls:
            good = [t for t in trials if t.num_qubits == n and t.with_controls == controls and t.error is None]
            if not good:
                continue
            fid = np.array([t.fidelity for t in good])
            mean_fid = fid.mean(axis=0)
            rms = rms_z_error([t.exact_jz for t in good], [t.scs_z for t in good], n / 2.0)
            for i, t in enumerate(times):
                points.append(
                    ApproxPoint(
                        num_qubits=n,
                        with_controls=controls,
                        t=t,
                        mean_fidelity=float(min(1.0, max(0.0, mean_fid[i]))),
                        rms_z_error=float(rms[i]),
                    )
                )
    correlations = {
        ("with_controls" if c else "no_controls"): _rank_correlation(points, c) for c in config.controls
    }
    return ApproxStudyResult(points=points, n_failed=n_failed, final_fidelity_rank_correlation=correlations)


def run_approximation_study(config: ApproxStudyConfig, threads: int = 1, diagram: Path | None = None) -> ApproxStudyResult:
    waveform = random_waveform(config.num_rotations, config.larmor, seeds.shared_waveform_stream(config.master_seed))

    def plan(request: ApproxStudyConfig) -> list[dict]:
        return [
            {"N": n, "controls": c, "trial": t}
            for n in request.qubit_counts
            for c in request.controls
            for t in range(request.trials)
        ]

    def work(task: dict) -> list[ApproxTrial]:
        return [approx_trial(config, task["N"], task["controls"], task["trial"], waveform)]

    def reduce(rows: list[ApproxTrial]) -> ApproxStudyResult:
        ordered = sorted(rows, key=lambda r: (r.num_qubits, not r.with_controls, r.trial))
        return summarize_approx(ordered, config)

    graph = build_trial_graph(plan, work, reduce)
    if diagram is not None:
        write_graph_diagram(graph, diagram)
    num_tasks = len(config.qubit_counts) * len(config.controls) * config.trials
    return run_trial_graph(graph, config, num_tasks, threads, desc="approx-study")


def write_approx_study(result: ApproxStudyResult, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    write_csv(
        out_dir / "approx_study.csv",
        ("N", "with_controls", "t", "mean_fidelity", "rms_z_error"),
        ((p.num_qubits, p.with_controls, p.t, p.mean_fidelity, p.rms_z_error) for p in result.points),
    )
    write_json(
        out_dir / "approx_summary.json",
        {"n_failed": result.n_failed, "final_fidelity_rank_correlation": result.final_fidelity_rank_correlation},
    )


# ==========================================
# 2. Squeezing demo
# ==========================================

class SqueezeDemoConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    num_qubits: int = Field(75, ge=2, description="Squeezing needs at least two qubits")
    with_controls: bool = False
    num_rotations: int = Field(10, ge=1, description="π/2 rotations when controls are on")
    larmor: float = Field(25 * math.pi, gt=0.0)
    total_time: float = Field(0.2, gt=0.0)
    dt: float = Field(1e-4, gt=0.0)
    kappa: float = Field(1.0, gt=0.0)
    snapshot_times: list[float] = Field([0.0, 0.03, 0.1, 0.2], description="Q-function sample times")
    sample_every: int = Field(10, ge=1, description="Steps between squeezing samples")
    q_grid: tuple[int, int] = Field((61, 120), description="(n_theta, n_phi) of the exported Q-function grid")
    seed: int = 0

    @model_validator(mode="after")
    def _check_timing(self) -> SqueezeDemoConfig:
        _check_grid(self.total_time, self.dt, self.num_rotations if self.with_controls else 0, self.larmor)
        if any(t < 0.0 or t > self.total_time + 1e-12 for t in self.snapshot_times):
            raise ConfigError("snapshot times must lie in [0, total_time]")
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.total_time / self.dt))


class QSnapshot(BaseModel):
    t: float
    theta: list[float]
    phi: list[float]
    q: list[float]


class SqueezeDemoResult(BaseModel):
    times: list[float]
    squeezing_db: list[float] = Field(description="10 log10 ξ_T² at each sample time")
    record_y: list[float] = Field(description="Integrated photocurrent y(t) at each sample time")
    mean_spin: list[tuple[float, float, float]] = Field(description="⟨J⟩/J of the measured run")
    mean_spin_free: list[tuple[float, float, float]] = Field(description="Bloch vector under the controls alone (κ = 0)")
    snapshots: list[QSnapshot]


def run_squeezing_demo(config: SqueezeDemoConfig) -> SqueezeDemoResult:
    n_steps = config.n_steps
    sample_steps = sorted(set(range(0, n_steps, config.sample_every)) | {n_steps})
    q_steps = {int(round(t / config.dt)): t for t in config.snapshot_times}
    wanted = sorted(set(sample_steps) | set(q_steps))

    if config.with_controls:
        waveform = random_waveform(config.num_rotations, config.larmor, seeds.shared_waveform_stream(config.seed))
    else:
        waveform = ControlWaveform.empty(config.larmor)
    traj = TrajectoryConfig(
        num_qubits=config.num_qubits, kappa=config.kappa, total_time=config.total_time, dt=config.dt, rng_seed=config.seed
    )
    start = BlochVector(1.0, 0.0, 0.0)
    run = simulate_truth(
        start, traj, waveform, seeds.stream(config.seed, seeds.TRUTH_NOISE, config.num_qubits), snapshot_steps=wanted
    )
    logger.info("--- [Squeeze] N=%d run done, worst Itô norm residual %.2e", config.num_qubits, run.max_norm_residual)

    # [Action]: κ = 0 的空记录只做旋转，得到没有测量时的 Bloch 轨迹
    silent = MeasurementRecord(dt=config.dt, increments=np.zeros(n_steps), kappa=0.0, num_qubits=config.num_qubits)
    free = propagate_scs_batch(silent, start.as_array()[None, :], waveform, snapshot_steps=sample_steps)

    y = run.record.integrated()
    theta, phi = uniform_sphere_grid(*config.q_grid)
    snapshots = []
    for step, t in sorted(q_steps.items()):
        q = q_function(run.snapshots[step], theta, phi)
        snapshots.append(QSnapshot(t=t, theta=theta.tolist(), phi=phi.tolist(), q=q.tolist()))

    spins = [mean_spin(run.snapshots[s]) for s in sample_steps]
    return SqueezeDemoResult(
        times=[s * config.dt for s in sample_steps],
        squeezing_db=[squeezing_db(run.snapshots[s]) for s in sample_steps],
        record_y=[float(y[s]) for s in sample_steps],
        mean_spin=[(v.x, v.y, v.z) for v in spins],
        mean_spin_free=[tuple(float(c) for c in free.snapshots[s][0]) for s in sample_steps],
        snapshots=snapshots,
    )


def write_squeezing_demo(result: SqueezeDemoResult, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    write_csv(
        out_dir / "squeezing.csv",
        ("t", "xi2_db", "y"),
        zip(result.times, result.squeezing_db, result.record_y),
    )
    write_csv(
        out_dir / "mean_spin.csv",
        ("t", "x", "y", "z", "free_x", "free_y", "free_z"),
        ((t, *m, *f) for t, m, f in zip(result.times, result.mean_spin, result.mean_spin_free)),
    )
    for snap in result.snapshots:
        write_csv(out_dir / f"qfunc_{snap.t:g}.csv", ("theta", "phi", "q"), zip(snap.theta, snap.phi, snap.q))
