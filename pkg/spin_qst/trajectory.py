"""
Control waveforms, measurement records and the three propagators:

- exact conditional Schrödinger equation (CSE) for |Ψ⟩ in the Dicke basis,
- spin-coherent-state (SCS) Bloch-vector filter, pure or mixed, batched over candidates,
- backaction-free rotation of the initial Bloch vector.

Every step first applies the measurement update for the innovation of that step
(left-endpoint ⟨Jz⟩), then the exact rotation generated by the constant field of the
current control segment. κ sets the time unit.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
from pathlib import Path

import msgpack
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.linalg import expm

from spin_qst.collective_spin import BlochVector, SymmetricState, build_ops, spin_coherent
from spin_qst.errors import ConfigError, IntegrationInstabilityError, InvalidStateError, StepSizeError

logger = logging.getLogger(__name__)

RECORD_FORMAT = "spin_qst.record"
WAVEFORM_FORMAT = "spin_qst.waveform"
FORMAT_VERSION = 1

COLLAPSE_NORM = 1e-8
GRID_TOL = 1e-6


# ==========================================
# 1. Config & waveform
# ==========================================

class TrajectoryConfig(BaseModel):
    """Simulation-scale constants of one trajectory."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    num_qubits: int = Field(ge=1, description="Number of qubits N")
    kappa: float = Field(1.0, gt=0.0, description="Measurement rate κ (time unit)")
    total_time: float = Field(ge=0.0, description="Final time T in units of 1/κ")
    dt: float = Field(1e-4, gt=0.0, description="Integration step in units of 1/κ")
    rng_seed: int = Field(0, description="Seed of the truth noise stream")
    max_norm_drift: float = Field(
        1e-3, gt=0.0, description="Largest tolerated per-step deviation from the Itô norm expansion"
    )

    @model_validator(mode="after")
    def _check_grid(self) -> TrajectoryConfig:
        steps = self.total_time / self.dt
        if abs(steps - round(steps)) > GRID_TOL:
            raise ConfigError(f"total_time/dt = {steps} is not an integer")
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.total_time / self.dt))


@dataclass(frozen=True, eq=False)
class ControlWaveform:
    """Piecewise-constant field b(t) = Ω_b e_i on [iτ, (i+1)τ), each segment a π/2 rotation."""

    axes: np.ndarray
    larmor: float

    def __post_init__(self):
        axes = np.array(self.axes, dtype=float).reshape(-1, 3)
        if self.larmor <= 0.0:
            raise ConfigError(f"Larmor frequency must be positive, got {self.larmor}")
        norms = np.linalg.norm(axes, axis=1)
        if np.any(norms == 0.0) or not np.all(np.isfinite(axes)):
            raise ConfigError("rotation axes must be finite and nonzero")
        axes = axes / norms[:, None]
        axes.setflags(write=False)
        object.__setattr__(self, "axes", axes)

    @classmethod
    def empty(cls, larmor: float = 1.0) -> ControlWaveform:
        return cls(np.zeros((0, 3)), larmor)

    @property
    def num_segments(self) -> int:
        return int(self.axes.shape[0])

    @property
    def tau(self) -> float:
        return math.pi / (2.0 * self.larmor)

    @property
    def total_time(self) -> float:
        return self.num_segments * self.tau

    def to_json(self) -> str:
        payload = {
            "format": WAVEFORM_FORMAT,
            "format_version": FORMAT_VERSION,
            "larmor": self.larmor,
            "segments": [{"axis": [float(a) for a in axis], "tau": self.tau} for axis in self.axes],
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> ControlWaveform:
        payload = json.loads(text)
        if payload.get("format") != WAVEFORM_FORMAT or payload.get("format_version") != FORMAT_VERSION:
            raise ConfigError("not a version-1 waveform file")
        axes = np.array([seg["axis"] for seg in payload["segments"]], dtype=float).reshape(-1, 3)
        return cls(axes, float(payload["larmor"]))


def random_waveform(num_rotations: int, larmor: float, rng: np.random.Generator) -> ControlWaveform:
    """`num_rotations` π/2 rotations about i.i.d. uniform axes on the unit sphere."""
    if num_rotations < 0:
        raise ConfigError("num_rotations must be >= 0")
    axes = rng.standard_normal((num_rotations, 3))
    return ControlWaveform(axes, larmor)


def rotation_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Right-handed rotation by `angle` about unit `axis` (Rodrigues), generator n -> axis × n."""
    kx, ky, kz = axis
    cross = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + math.sin(angle) * cross + (1.0 - math.cos(angle)) * (cross @ cross)


@lru_cache(maxsize=32)
def _collective_unitaries(axes_bytes: bytes, angle: float, num_qubits: int) -> np.ndarray:
    axes = np.frombuffer(axes_bytes, dtype=float).reshape(-1, 3)
    ops = build_ops(num_qubits)
    unitaries = np.empty((axes.shape[0], ops.dim, ops.dim), dtype=complex)
    for k, (ax, ay, az) in enumerate(axes):
        generator = ax * ops.jx + ay * ops.jy + az * ops.jz
        unitaries[k] = expm(-1j * angle * generator)
    unitaries.setflags(write=False)
    return unitaries


@dataclass(eq=False)
class ControlSchedule:
    """A waveform snapped onto the integration grid."""

    waveform: ControlWaveform
    dt: float
    n_steps: int
    segment_of_step: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        index = np.full(self.n_steps, -1, dtype=int)
        if self.waveform.num_segments:
            ratio = self.waveform.tau / self.dt
            if abs(ratio - round(ratio)) > GRID_TOL:
                raise ConfigError(
                    f"segment duration τ={self.waveform.tau} is not a whole number of dt={self.dt}"
                )
            per_segment = int(round(ratio))
            index = np.arange(self.n_steps) // per_segment
            index[index >= self.waveform.num_segments] = -1
        self.segment_of_step = index

    @property
    def step_angle(self) -> float:
        return self.waveform.larmor * self.dt

    @cached_property
    def step_rotations(self) -> np.ndarray:
        return np.array([rotation_matrix(axis, self.step_angle) for axis in self.waveform.axes]).reshape(-1, 3, 3)

    def collective_unitaries(self, num_qubits: int) -> np.ndarray:
        return _collective_unitaries(self.waveform.axes.tobytes(), self.step_angle, num_qubits)

    @cached_property
    def heisenberg_z(self) -> np.ndarray:
        """Rows h_i with z(t_i) = h_i · n(0) under the controls alone."""
        h = np.empty((self.n_steps, 3))
        # accumulated rotation R(t_i); h_i is its bottom row
        accumulated = np.eye(3)
        rotations = self.step_rotations
        for i in range(self.n_steps):
            h[i] = accumulated[2]
            seg = self.segment_of_step[i]
            if seg >= 0:
                accumulated = rotations[seg] @ accumulated
        return h


# ==========================================
# 2. Measurement record
# ==========================================

@dataclass(frozen=True, eq=False)
class MeasurementRecord:
    """Increments dy_i of the integrated photocurrent over [iΔt, (i+1)Δt)."""

    dt: float
    increments: np.ndarray
    kappa: float
    num_qubits: int
    seed: int | None = None

    def __post_init__(self):
        inc = np.array(self.increments, dtype=float).ravel()
        if self.dt <= 0.0 or self.kappa < 0.0 or self.num_qubits < 1:
            raise ConfigError("record needs dt > 0, kappa >= 0 and num_qubits >= 1")
        if not np.all(np.isfinite(inc)):
            raise InvalidStateError("record increments must be finite")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def n_steps(self) -> int:
        return int(self.increments.shape[0])

    @property
    def total_time(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        """Left endpoints t_i = iΔt of each increment."""
        return np.arange(self.n_steps) * self.dt

    def integrated(self) -> np.ndarray:
        """y(t_i) for i = 0..n (y(0) = 0)."""
        return np.concatenate([[0.0], np.cumsum(self.increments)])

    def truncated(self, n_steps: int) -> MeasurementRecord:
        if not 0 <= n_steps <= self.n_steps:
            raise ConfigError(f"cannot truncate a {self.n_steps}-step record to {n_steps} steps")
        return replace(self, increments=self.increments[:n_steps])

    def to_msgpack(self) -> bytes:
        return msgpack.packb(
            {
                "format": RECORD_FORMAT,
                "format_version": FORMAT_VERSION,
                "dt": self.dt,
                "kappa": self.kappa,
                "num_qubits": self.num_qubits,
                "seed": self.seed,
                "increments": self.increments.astype("<f8").tobytes(),
            },
            use_bin_type=True,
        )

    @classmethod
    def from_msgpack(cls, blob: bytes) -> MeasurementRecord:
        payload = msgpack.unpackb(blob, raw=False)
        if payload.get("format") != RECORD_FORMAT or payload.get("format_version") != FORMAT_VERSION:
            raise ConfigError("not a version-1 measurement record")
        return cls(
            dt=payload["dt"],
            increments=np.frombuffer(payload["increments"], dtype="<f8"),
            kappa=payload["kappa"],
            num_qubits=payload["num_qubits"],
            seed=payload["seed"],
        )

    def write_csv(self, path: Path) -> None:
        header = (
            f"# format={RECORD_FORMAT} format_version={FORMAT_VERSION} dt={self.dt!r} "
            f"kappa={self.kappa!r} num_qubits={self.num_qubits} seed={self.seed}"
        )
        with open(path, "w", newline="") as f:
            f.write(header + "\n")
            writer = csv.writer(f)
            writer.writerow(["step", "t", "dy"])
            for i, dy in enumerate(self.increments):
                writer.writerow([i, repr(i * self.dt), repr(float(dy))])

    @classmethod
    def read_csv(cls, path: Path) -> MeasurementRecord:
        with open(path, newline="") as f:
            header = f.readline().lstrip("#").split()
            meta = dict(item.split("=", 1) for item in header)
            if meta.get("format") != RECORD_FORMAT or int(meta.get("format_version", -1)) != FORMAT_VERSION:
                raise ConfigError(f"{path} is not a version-1 record CSV")
            rows = list(csv.DictReader(f))
        seed = None if meta["seed"] == "None" else int(meta["seed"])
        return cls(
            dt=float(meta["dt"]),
            increments=np.array([float(r["dy"]) for r in rows]),
            kappa=float(meta["kappa"]),
            num_qubits=int(meta["num_qubits"]),
            seed=seed,
        )


@dataclass(frozen=True, eq=False)
class TruthRun:
    """Output of truth generation: the record plus what produced it."""

    record: MeasurementRecord
    jz: np.ndarray
    noise: np.ndarray
    snapshots: dict[int, SymmetricState]
    max_norm_residual: float


@dataclass(frozen=True, eq=False)
class FilterPath:
    jz: np.ndarray
    snapshots: dict[int, SymmetricState]


@dataclass(frozen=True, eq=False)
class ScsPath:
    """Batched SCS filter output; rows of invalid candidates are NaN."""

    z: np.ndarray
    valid: np.ndarray
    snapshots: dict[int, np.ndarray]


# ==========================================
# 3. Exact CSE
# ==========================================

def _measurement_step(psi, m, mean, dv, kappa, dt):
    """Normalized Kraus-form Euler step; returns (new psi, squared norm before normalizing)."""
    d = m - mean
    kraus = 1.0 + 0.5 * math.sqrt(kappa) * d * dv - 0.125 * kappa * d * d * dt
    phi = kraus * psi
    norm_sq = float(np.vdot(phi, phi).real)
    if not math.isfinite(norm_sq) or norm_sq < COLLAPSE_NORM**2:
        raise IntegrationInstabilityError(f"CSE norm collapsed to {norm_sq:.3e}")
    return phi / math.sqrt(norm_sq), norm_sq


def _run_cse(psi, num_qubits, kappa, dt, schedule, increments=None, noise=None, snapshot_steps=(), max_residual=None):
    ops = build_ops(num_qubits)
    m = ops.m_values
    unitaries = schedule.collective_unitaries(num_qubits) if schedule.waveform.num_segments else None
    n_steps = schedule.n_steps
    jz = np.empty(n_steps)
    dy_out = np.empty(n_steps)
    wanted = set(snapshot_steps)
    snapshots: dict[int, SymmetricState] = {}
    sqrt_kappa = math.sqrt(kappa)
    worst = 0.0

    for i in range(n_steps):
        if i in wanted:
            snapshots[i] = SymmetricState.from_vector(psi, num_qubits)
        prob = psi.real**2 + psi.imag**2
        mean = float(prob @ m)
        jz[i] = mean
        # 真值模式：dv 就是 Wiener 增量；滤波模式：dv 从记录里减去预测信号
        if noise is not None:
            dv = noise[i]
            dy_out[i] = dv + sqrt_kappa * mean * dt
        else:
            dv = increments[i] - sqrt_kappa * mean * dt
        try:
            psi, norm_sq = _measurement_step(psi, m, mean, dv, kappa, dt)
        except IntegrationInstabilityError as exc:
            raise IntegrationInstabilityError(str(exc), step=i) from None
        # [Check]: 和二阶 Itô 展开比较，偏差太大说明 dt 太粗
        if max_residual is not None:
            variance = float(prob @ (m - mean) ** 2)
            residual = abs(norm_sq - 1.0 - 0.25 * kappa * variance * (dv * dv - dt))
            worst = max(worst, residual)
            if residual > max_residual:
                raise StepSizeError(
                    f"norm drift {residual:.2e} at step {i} exceeds {max_residual:.1e}; reduce dt", step=i
                )
        # [Action]: 测量更新之后再做这一步的精确旋转
        seg = schedule.segment_of_step[i]
        if seg >= 0:
            psi = unitaries[seg] @ psi
        if not np.all(np.isfinite(psi)):
            raise IntegrationInstabilityError("CSE produced non-finite amplitudes", step=i)

    if n_steps in wanted:
        snapshots[n_steps] = SymmetricState.from_vector(psi, num_qubits)
    return jz, dy_out, snapshots, worst


def simulate_truth(
    initial: BlochVector,
    config: TrajectoryConfig,
    waveform: ControlWaveform,
    rng: np.random.Generator,
    snapshot_steps=(),
) -> TruthRun:
    """Generate a record from |Ψ(0)⟩ = SCS(initial) with the exact CSE and dv = dw."""
    if waveform.num_segments and abs(waveform.total_time - config.total_time) > 1e-9:
        raise ConfigError(
            f"waveform covers T={waveform.total_time}, config asks for T={config.total_time}"
        )
    schedule = ControlSchedule(waveform, config.dt, config.n_steps)
    psi = spin_coherent(initial, config.num_qubits).amplitudes.copy()
    noise = rng.normal(0.0, math.sqrt(config.dt), config.n_steps)
    jz, increments, snapshots, worst = _run_cse(
        psi,
        config.num_qubits,
        config.kappa,
        config.dt,
        schedule,
        noise=noise,
        snapshot_steps=snapshot_steps,
        max_residual=config.max_norm_drift,
    )
    record = MeasurementRecord(
        dt=config.dt, increments=increments, kappa=config.kappa, num_qubits=config.num_qubits, seed=config.rng_seed
    )
    return TruthRun(record=record, jz=jz, noise=noise, snapshots=snapshots, max_norm_residual=worst)


def propagate_cse(
    record: MeasurementRecord,
    initial: SymmetricState,
    waveform: ControlWaveform,
    snapshot_steps=(),
) -> FilterPath:
    """Exact filter from an arbitrary initial state against the record's increments."""
    if initial.num_qubits != record.num_qubits:
        raise InvalidStateError("initial state and record disagree on N")
    schedule = ControlSchedule(waveform, record.dt, record.n_steps)
    jz, _, snapshots, _ = _run_cse(
        initial.amplitudes.copy(),
        record.num_qubits,
        record.kappa,
        record.dt,
        schedule,
        increments=record.increments,
        snapshot_steps=snapshot_steps,
    )
    return FilterPath(jz=jz, snapshots=snapshots)


# ==========================================
# 4. SCS Bloch-vector filter
# ==========================================

def propagate_scs_batch(
    record: MeasurementRecord,
    initials,
    waveform: ControlWaveform,
    snapshot_steps=(),
) -> ScsPath:
    """SCS filter for K initial Bloch vectors (norm ≤ 1) at once.

    The measurement update is the single-qubit Kraus step with ⟨jz⟩ = z/2 and the
    innovation dv = dy − √κ (N/2) z dt. A row whose trace collapses or turns non-finite
    is marked invalid and carried as NaN.
    """
    n_vec = np.array(initials, dtype=float).reshape(-1, 3)
    if np.any(np.linalg.norm(n_vec, axis=1) > 1.0 + 1e-9):
        raise InvalidStateError("SCS initial conditions must have norm <= 1")
    schedule = ControlSchedule(waveform, record.dt, record.n_steps)
    rotations = schedule.step_rotations
    n_steps = record.n_steps
    dt = record.dt
    kappa = record.kappa
    sqrt_kappa = math.sqrt(kappa)
    half_n = 0.5 * record.num_qubits
    beta = -0.125 * kappa * dt

    z_out = np.empty((n_vec.shape[0], n_steps))
    valid = np.ones(n_vec.shape[0], dtype=bool)
    wanted = set(snapshot_steps)
    snapshots: dict[int, np.ndarray] = {}

    with np.errstate(all="ignore"):
        for i in range(n_steps):
            if i in wanted:
                snapshots[i] = n_vec.copy()
            z = n_vec[:, 2]
            z_out[:, i] = z
            dv = record.increments[i] - sqrt_kappa * half_n * z * dt
            alpha = 0.5 * sqrt_kappa * dv
            p = 0.5 * (1.0 + z)
            q = 0.5 * (1.0 - z)
            m_up = 1.0 + alpha * q + beta * q * q
            m_down = 1.0 - alpha * p + beta * p * p
            w_up = m_up * m_up * p
            w_down = m_down * m_down * q
            trace = w_up + w_down
            coherence = m_up * m_down / trace
            n_vec = np.column_stack(
                (coherence * n_vec[:, 0], coherence * n_vec[:, 1], (w_up - w_down) / trace)
            )
            seg = schedule.segment_of_step[i]
            if seg >= 0:
                r = rotations[seg]
                # elementwise so a row never depends on the rest of the batch
                n_vec = n_vec[:, :1] * r[:, 0] + n_vec[:, 1:2] * r[:, 1] + n_vec[:, 2:] * r[:, 2]
            # [Check]: 迹塌缩或出现 NaN 的候选标记为无效，不再参与比较
            bad = ~(np.isfinite(n_vec).all(axis=1) & (trace > COLLAPSE_NORM**2))
            if bad.any():
                valid &= ~bad
                n_vec[bad] = np.nan
            norms = np.linalg.norm(n_vec, axis=1)
            over = norms > 1.0
            if over.any():
                n_vec[over] /= norms[over, None]

    if n_steps in wanted:
        snapshots[n_steps] = n_vec.copy()
    z_out[~valid] = np.nan
    return ScsPath(z=z_out, valid=valid, snapshots=snapshots)


def propagate_scs(record: MeasurementRecord, initial: BlochVector, waveform: ControlWaveform) -> np.ndarray:
    """z(t_i) of the SCS filter; raises IntegrationInstabilityError when it breaks down."""
    path = propagate_scs_batch(record, initial.as_array()[None, :], waveform)
    if not path.valid[0]:
        raise IntegrationInstabilityError("SCS filter produced non-finite Bloch vector")
    return path.z[0]


# ==========================================
# 5. Backaction-free model & error metric
# ==========================================

def propagate_backaction_free(initial: BlochVector, waveform: ControlWaveform, dt: float, n_steps: int) -> np.ndarray:
    """z(t_i) = e_z · R(t_i) n(0) on the grid t_i = iΔt, no record involved."""
    if not initial.is_pure():
        raise InvalidStateError("backaction-free propagation takes a unit Bloch vector")
    schedule = ControlSchedule(waveform, dt, n_steps)
    return schedule.heisenberg_z @ initial.as_array()


def rms_z_error(exact_jz, approx_z, spin: float) -> np.ndarray:
    """Per-time RMS over trials of (⟨Jz⟩/J − z); inputs are (trials, steps) or a single series."""
    exact = np.atleast_2d(np.asarray(exact_jz, dtype=float))
    approx = np.atleast_2d(np.asarray(approx_z, dtype=float))
    if exact.shape != approx.shape:
        raise InvalidStateError(f"series shapes differ: {exact.shape} vs {approx.shape}")
    return np.sqrt(np.mean((exact / spin - approx) ** 2, axis=0))
