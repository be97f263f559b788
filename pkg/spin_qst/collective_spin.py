"""
Collective spin algebra in the exchange-symmetric subspace of N qubits.

Dicke basis ordering is m descending: index k <-> m = J - k, J = N/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import comb

from spin_qst.errors import DimensionMismatchError, InvalidStateError

NORM_TOL = 1e-10
UNIT_TOL = 1e-9


# ==========================================
# 1. Types (数据定义)
# ==========================================

@dataclass(frozen=True)
class BlochVector:
    """Single-qubit Bloch vector (⟨σx⟩, ⟨σy⟩, ⟨σz⟩); pure states have unit norm."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        components = (self.x, self.y, self.z)
        if not all(math.isfinite(c) for c in components):
            raise InvalidStateError(f"Bloch vector has non-finite components: {components}")
        if self.norm() > 1.0 + UNIT_TOL:
            raise InvalidStateError(f"Bloch vector norm {self.norm():.12f} exceeds 1")

    @classmethod
    def from_array(cls, values) -> BlochVector:
        x, y, z = (float(v) for v in np.asarray(values, dtype=float).reshape(3))
        return cls(x, y, z)

    @classmethod
    def from_angles(cls, theta: float, phi: float) -> BlochVector:
        return cls(
            math.sin(theta) * math.cos(phi),
            math.sin(theta) * math.sin(phi),
            math.cos(theta),
        )

    @classmethod
    def zero(cls) -> BlochVector:
        return cls(0.0, 0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def is_pure(self, tol: float = UNIT_TOL) -> bool:
        return abs(self.norm() - 1.0) <= tol

    def angles(self) -> tuple[float, float]:
        """Polar and azimuthal angle of the direction, phi folded into [0, 2π)."""
        r = self.norm()
        if r == 0.0:
            return 0.0, 0.0
        theta = math.acos(max(-1.0, min(1.0, self.z / r)))
        phi = math.atan2(self.y, self.x) % (2.0 * math.pi)
        return theta, phi

    def normalized(self) -> BlochVector:
        r = self.norm()
        if r == 0.0:
            raise InvalidStateError("cannot normalize the zero Bloch vector")
        return BlochVector(self.x / r, self.y / r, self.z / r)

    def dot(self, other: BlochVector) -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z


@dataclass(frozen=True, eq=False)
class SymmetricState:
    """Pure state of N qubits in the (N+1)-dimensional symmetric subspace."""

    amplitudes: np.ndarray
    num_qubits: int

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex)
        if self.num_qubits < 1:
            raise InvalidStateError("num_qubits must be >= 1")
        if amps.ndim != 1 or amps.shape[0] != self.num_qubits + 1:
            raise InvalidStateError(
                f"expected {self.num_qubits + 1} amplitudes, got shape {amps.shape}"
            )
        if not np.all(np.isfinite(amps)):
            raise InvalidStateError("state has non-finite amplitudes")
        norm_sq = float(np.vdot(amps, amps).real)
        if abs(norm_sq - 1.0) > NORM_TOL:
            raise InvalidStateError(f"state squared norm {norm_sq:.14f} differs from 1")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_vector(cls, vector, num_qubits: int | None = None) -> SymmetricState:
        """Normalizes an arbitrary nonzero vector into a state."""
        vec = np.asarray(vector, dtype=complex)
        norm = np.linalg.norm(vec)
        if norm == 0.0 or not np.isfinite(norm):
            raise InvalidStateError("cannot normalize a zero or non-finite vector")
        n = vec.shape[0] - 1 if num_qubits is None else num_qubits
        return cls(vec / norm, n)

    @classmethod
    def dicke(cls, num_qubits: int, index: int) -> SymmetricState:
        vec = np.zeros(num_qubits + 1, dtype=complex)
        vec[index] = 1.0
        return cls(vec, num_qubits)

    @property
    def dim(self) -> int:
        return self.num_qubits + 1

    @property
    def spin(self) -> float:
        return self.num_qubits / 2.0


@dataclass(frozen=True, eq=False)
class CollectiveOps:
    """Dense collective angular momentum matrices (ħ = 1).

    jx is real symmetric, jy is i times a real antisymmetric matrix; both are
    tridiagonal.
    """

    jx: np.ndarray
    jy: np.ndarray
    jz: np.ndarray
    num_qubits: int
    m_values: np.ndarray = field(repr=False)

    @property
    def spin(self) -> float:
        return self.num_qubits / 2.0

    @property
    def dim(self) -> int:
        return self.num_qubits + 1

    def as_tuple(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.jx, self.jy, self.jz


# ==========================================
# 2. Operators & states
# ==========================================

@lru_cache(maxsize=64)
def build_ops(num_qubits: int) -> CollectiveOps:
    """Spin-J ladder construction of Jx, Jy, Jz with J = N/2."""
    if num_qubits < 1:
        raise InvalidStateError(f"num_qubits must be >= 1, got {num_qubits}")
    spin = num_qubits / 2.0
    m = spin - np.arange(num_qubits + 1, dtype=float)
    # J+ |m> = sqrt(J(J+1) - m(m+1)) |m+1>, and |m+1> sits one index above |m>
    ladder = np.sqrt(spin * (spin + 1.0) - m[1:] * (m[1:] + 1.0))
    jp = np.diag(ladder, k=1).astype(complex)
    jm = jp.conj().T
    jx = 0.5 * (jp + jm)
    jy = -0.5j * (jp - jm)
    jz = np.diag(m).astype(complex)
    for mat in (jx, jy, jz, m):
        mat.setflags(write=False)
    return CollectiveOps(jx=jx, jy=jy, jz=jz, num_qubits=num_qubits, m_values=m)


def scs_amplitudes(theta, phi, num_qubits: int) -> np.ndarray:
    """Amplitudes of |θ,φ⟩^{⊗N}; broadcasts over arrays of angles (last axis = Dicke index).

    Index k (m = J - k) carries sqrt(C(N,k)) cos(θ/2)^{N-k} sin(θ/2)^k e^{ikφ}, so that
    ⟨J⟩ = (N/2) n(θ, φ) with the usual azimuth.
    """
    theta = np.asarray(theta, dtype=float)[..., None]
    phi = np.asarray(phi, dtype=float)[..., None]
    k = np.arange(num_qubits + 1)
    weights = np.sqrt(comb(num_qubits, k))
    c = np.cos(theta / 2.0)
    s = np.sin(theta / 2.0)
    return weights * np.power(c, num_qubits - k) * np.power(s, k) * np.exp(1j * k * phi)


def spin_coherent(direction: BlochVector, num_qubits: int) -> SymmetricState:
    """The product state |n⟩^{⊗N} for a unit Bloch vector n."""
    if not direction.is_pure():
        raise InvalidStateError(
            f"spin coherent state needs a unit direction, got norm {direction.norm():.12f}"
        )
    theta, phi = direction.angles()
    amps = scs_amplitudes(theta, phi, num_qubits)
    return SymmetricState.from_vector(amps, num_qubits)


def _check_dim(state: SymmetricState, size: int) -> None:
    if state.dim != size:
        raise DimensionMismatchError(f"state dimension {state.dim} does not match {size}")


def expect(state: SymmetricState, op: np.ndarray) -> float:
    """⟨ψ|op|ψ⟩ for a Hermitian op; a non-negligible imaginary part is an error."""
    op = np.asarray(op)
    if op.shape != (state.dim, state.dim):
        raise DimensionMismatchError(f"operator shape {op.shape} does not match state dim {state.dim}")
    psi = state.amplitudes
    value = np.vdot(psi, op @ psi)
    if abs(value.imag) > UNIT_TOL * max(1.0, abs(value.real)):
        raise InvalidStateError(f"expectation value has imaginary part {value.imag:.3e}; op not Hermitian?")
    return float(value.real)


def mean_spin(state: SymmetricState) -> BlochVector:
    """⟨J⟩/J, the Bloch vector of the mean collective spin."""
    ops = build_ops(state.num_qubits)
    vec = np.array([expect(state, op) for op in ops.as_tuple()]) / ops.spin
    return BlochVector.from_array(vec)


def fidelity(a: SymmetricState, b: SymmetricState) -> float:
    _check_dim(b, a.dim)
    overlap = np.vdot(a.amplitudes, b.amplitudes)
    return float(min(1.0, abs(overlap) ** 2))


def qubit_fidelity(a: BlochVector, b: BlochVector) -> float:
    """Fidelity between two pure qubit states, (1 + a·b)/2."""
    if not (a.is_pure() and b.is_pure()):
        raise InvalidStateError("qubit_fidelity is defined for pure (unit) Bloch vectors")
    return float(min(1.0, max(0.0, 0.5 * (1.0 + a.dot(b)))))


# ==========================================
# 3. Squeezing & Q-function
# ==========================================

def _min_eig_sym3(g: np.ndarray) -> float:
    """Smallest eigenvalue of a real symmetric 3x3 matrix (trigonometric closed form)."""
    p1 = g[0, 1] ** 2 + g[0, 2] ** 2 + g[1, 2] ** 2
    q = np.trace(g) / 3.0
    if p1 == 0.0:
        return float(np.min(np.diag(g)))
    p2 = (g[0, 0] - q) ** 2 + (g[1, 1] - q) ** 2 + (g[2, 2] - q) ** 2 + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    if p == 0.0:
        return float(q)
    b = (g - q * np.eye(3)) / p
    r = max(-1.0, min(1.0, np.linalg.det(b) / 2.0))
    angle = math.acos(r) / 3.0
    return float(q + 2.0 * p * math.cos(angle + 2.0 * math.pi / 3.0))


def correlation_matrix(state: SymmetricState) -> np.ndarray:
    """G_ij = (N/2)⟨JiJj + JjJi⟩ − (N−1)⟨Ji⟩⟨Jj⟩."""
    ops = build_ops(state.num_qubits)
    psi = state.amplitudes
    applied = np.stack([op @ psi for op in ops.as_tuple()])
    first = np.real(np.einsum("k,ik->i", psi.conj(), applied))
    # ⟨JiJj + JjJi⟩ = 2 Re⟨Ji ψ|Jj ψ⟩ for Hermitian Ji
    second = 2.0 * np.real(applied.conj() @ applied.T)
    n = state.num_qubits
    return 0.5 * n * second - (n - 1) * np.outer(first, first)


def squeezing_parameter(state: SymmetricState) -> float:
    """ξ_T² = λ_min(G)/J²; equals 1 for every spin coherent state."""
    g = correlation_matrix(state)
    return _min_eig_sym3(0.5 * (g + g.T)) / state.spin**2


def squeezing_db(state: SymmetricState) -> float:
    return 10.0 * math.log10(squeezing_parameter(state))


def q_function(state: SymmetricState, theta, phi) -> np.ndarray:
    """Spin-Husimi Q(ϑ,φ) = (N+1)/(4π)·|⟨ϑ,φ|Ψ⟩|² on paired angle arrays."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(theta < 0.0) or np.any(theta > math.pi):
        raise InvalidStateError("polar angles must lie in [0, π]")
    coherent = scs_amplitudes(theta, phi, state.num_qubits)
    overlaps = coherent.conj() @ state.amplitudes
    return (state.num_qubits + 1) / (4.0 * math.pi) * np.abs(overlaps) ** 2


def uniform_sphere_grid(n_theta: int, n_phi: int) -> tuple[np.ndarray, np.ndarray]:
    """Plot grid: ϑ ∈ [0, π] inclusive, φ ∈ [0, 2π) exclusive, flattened row-major."""
    theta = np.linspace(0.0, math.pi, n_theta)
    phi = np.arange(n_phi) * (2.0 * math.pi / n_phi)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    return tt.ravel(), pp.ravel()


def sphere_quadrature(n_theta: int, n_phi: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gauss–Legendre in cosϑ times a periodic φ grid; weights sum to 4π."""
    nodes, gl_weights = np.polynomial.legendre.leggauss(n_theta)
    theta = np.arccos(nodes)
    phi = np.arange(n_phi) * (2.0 * math.pi / n_phi)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    weights = np.outer(gl_weights, np.full(n_phi, 2.0 * math.pi / n_phi))
    return tt.ravel(), pp.ravel(), weights.ravel()
