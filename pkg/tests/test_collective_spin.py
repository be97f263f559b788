import math

import numpy as np
import pytest

from spin_qst.collective_spin import (
    BlochVector,
    SymmetricState,
    build_ops,
    correlation_matrix,
    expect,
    fidelity,
    mean_spin,
    q_function,
    qubit_fidelity,
    spin_coherent,
    sphere_quadrature,
    squeezing_db,
    squeezing_parameter,
)
from spin_qst.errors import DimensionMismatchError, InvalidStateError

QUBIT_COUNTS = (1, 2, 4, 25, 75, 100)


def _random_direction(rng) -> BlochVector:
    v = rng.standard_normal(3)
    return BlochVector.from_array(v / np.linalg.norm(v))


@pytest.mark.parametrize("n", QUBIT_COUNTS)
def test_commutation_and_casimir(n):
    ops = build_ops(n)
    jx, jy, jz = ops.as_tuple()
    tol = 1e-10
    assert np.allclose(jx @ jy - jy @ jx, 1j * jz, rtol=0.0, atol=tol)
    assert np.allclose(jy @ jz - jz @ jy, 1j * jx, rtol=0.0, atol=tol)
    assert np.allclose(jz @ jx - jx @ jz, 1j * jy, rtol=0.0, atol=tol)
    casimir = jx @ jx + jy @ jy + jz @ jz
    assert np.allclose(casimir, ops.spin * (ops.spin + 1) * np.eye(ops.dim), rtol=0.0, atol=tol)


def test_dicke_ordering_is_descending_in_m():
    ops = build_ops(4)
    assert ops.dim == 5
    assert np.allclose(np.diag(ops.jz).real, [2, 1, 0, -1, -2])
    top = SymmetricState.dicke(4, 0)
    assert math.isclose(expect(top, ops.jz), 2.0)


def test_operator_structure_and_phase_convention():
    ops = build_ops(5)
    for op in ops.as_tuple():
        assert np.allclose(op, op.conj().T)
        assert not np.any(np.triu(op, 2)) and not np.any(np.tril(op, -2))
    assert not np.any(ops.jx.imag)
    # jy = −½i(J+ − J−) is purely imaginary under the e^{+ikφ} convention
    assert not np.any(ops.jy.real)
    assert np.any(ops.jy.imag)

    phi = 0.7
    amps = spin_coherent(BlochVector.from_angles(math.pi / 2, phi), 1).amplitudes
    assert np.isclose(amps[1] / amps[0], np.exp(1j * phi))
    assert math.isclose(expect(spin_coherent(BlochVector(0.0, 1.0, 0.0), 4), build_ops(4).jy), 2.0)


@pytest.mark.parametrize("n", QUBIT_COUNTS)
def test_scs_first_moments(n, rng):
    for _ in range(5):
        direction = _random_direction(rng)
        state = spin_coherent(direction, n)
        assert np.allclose(mean_spin(state).as_array(), direction.as_array(), atol=1e-10)


@pytest.mark.parametrize("n", (2, 4, 25, 75, 100))
def test_scs_is_not_squeezed(n, rng):
    state = spin_coherent(_random_direction(rng), n)
    assert math.isclose(squeezing_parameter(state), 1.0, abs_tol=1e-9)
    assert abs(squeezing_db(state)) < 1e-7
    g = correlation_matrix(state)
    assert np.allclose(g, g.T, atol=1e-9)


def test_scs_overlap_matches_product_formula(rng):
    for n in (1, 3, 10):
        a, b = _random_direction(rng), _random_direction(rng)
        expected = (0.5 * (1.0 + a.dot(b))) ** n
        assert math.isclose(fidelity(spin_coherent(a, n), spin_coherent(b, n)), expected, abs_tol=1e-12)


@pytest.mark.parametrize("n", QUBIT_COUNTS)
def test_q_function_is_normalized(n, rng):
    theta, phi, weights = sphere_quadrature(n // 2 + 2, 2 * n + 2)
    for state in (spin_coherent(_random_direction(rng), n), SymmetricState.dicke(n, n // 2)):
        total = float(np.sum(weights * q_function(state, theta, phi)))
        assert math.isclose(total, 1.0, abs_tol=1e-9)


def test_q_function_peaks_on_the_coherent_direction():
    state = spin_coherent(BlochVector(1.0, 0.0, 0.0), 30)
    theta = np.array([math.pi / 2, math.pi / 2, 0.0])
    phi = np.array([0.0, math.pi, 0.0])
    q = q_function(state, theta, phi)
    assert q[0] > q[2] > q[1]
    assert math.isclose(q[0], 31 / (4 * math.pi), rel_tol=1e-9)


def test_qubit_fidelity():
    up, down = BlochVector(0.0, 0.0, 1.0), BlochVector(0.0, 0.0, -1.0)
    assert qubit_fidelity(up, up) == 1.0
    assert qubit_fidelity(up, down) == 0.0
    assert math.isclose(qubit_fidelity(up, BlochVector(1.0, 0.0, 0.0)), 0.5)
    with pytest.raises(InvalidStateError):
        qubit_fidelity(up, BlochVector(0.0, 0.0, 0.5))


def test_bloch_vector_invariants():
    with pytest.raises(InvalidStateError):
        BlochVector(1.0, 1.0, 0.0)
    with pytest.raises(InvalidStateError):
        BlochVector(math.nan, 0.0, 0.0)
    with pytest.raises(InvalidStateError):
        BlochVector.zero().normalized()
    v = BlochVector.from_angles(0.7, 2.0)
    assert np.allclose(v.angles(), (0.7, 2.0))
    assert v.is_pure()


def test_state_validation():
    with pytest.raises(InvalidStateError):
        SymmetricState(np.array([1.0, 1.0]), 1)
    with pytest.raises(DimensionMismatchError):
        fidelity(SymmetricState.dicke(2, 0), SymmetricState.dicke(3, 0))
    with pytest.raises(DimensionMismatchError):
        expect(SymmetricState.dicke(2, 0), build_ops(3).jz)
