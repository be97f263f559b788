import math

import numpy as np
import pytest

from spin_qst.collective_spin import BlochVector, spin_coherent
from spin_qst.errors import DimensionMismatchError, InvalidStateError
from spin_qst.likelihood import (
    LLRValue,
    MeanSignalSeries,
    backaction_free_scores,
    gaussian_step_log_density,
    llr_backaction_free,
    llr_exact,
    llr_general,
    llr_scs,
    scs_scores,
)
from spin_qst.trajectory import MeasurementRecord, random_waveform

LARMOR = 25 * math.pi


@pytest.fixture
def record(truth_factory, waveform):
    return truth_factory(10, waveform, seed=11).record


def test_llr_of_identical_candidates_is_zero(record, waveform):
    a = BlochVector.from_angles(0.9, 2.1)
    assert llr_scs(record, a, a, waveform).value == 0.0
    assert llr_backaction_free(record, a, a, waveform).value == 0.0
    mixed = BlochVector(0.3, -0.2, 0.1)
    assert llr_scs(record, mixed, mixed, waveform).value == 0.0


def test_true_state_beats_its_antipode_at_fifty_qubits(truth_factory, rng):
    # ten π/2 rotations: κT = 0.2
    waveform = random_waveform(10, LARMOR, np.random.default_rng(21))
    trials, wins = 20, 0
    for seed in range(trials):
        v = rng.standard_normal(3)
        truth = BlochVector.from_array(v / np.linalg.norm(v))
        record = truth_factory(50, waveform, seed=seed, direction=truth, dt=1e-4, total_time=0.2).record
        llr = llr_scs(record, truth, BlochVector.from_array(-truth.as_array()), waveform)
        assert llr.valid
        wins += llr.value > 0.0
    assert wins >= 0.95 * trials


def test_llr_is_antisymmetric_and_telescopes(record, waveform):
    a = BlochVector.from_angles(0.4, 0.2)
    b = BlochVector(0.1, 0.5, -0.2)
    c = BlochVector.from_angles(2.5, 4.0)
    ab = llr_scs(record, a, b, waveform).value
    assert ab == -llr_scs(record, b, a, waveform).value
    bc = llr_scs(record, b, c, waveform).value
    ac = llr_scs(record, a, c, waveform).value
    assert math.isclose(ac, ab + bc, rel_tol=0.0, abs_tol=1e-9 * max(1.0, abs(ac)))


def test_argmax_does_not_depend_on_the_reference(record, waveform, rng):
    candidates = rng.standard_normal((30, 3))
    candidates *= 0.75 / np.linalg.norm(candidates, axis=1)[:, None]
    scores, valid = scs_scores(record, candidates, waveform)
    assert valid.all()
    ref_a, _ = scs_scores(record, np.zeros((1, 3)), waveform)
    ref_b, _ = scs_scores(record, np.array([[0.0, 0.6, 0.0]]), waveform)
    assert np.argmax(scores - ref_a[0]) == np.argmax(scores - ref_b[0])


def test_scores_do_not_depend_on_batch_composition(record, waveform, rng):
    blochs = rng.standard_normal((6, 3))
    blochs /= np.linalg.norm(blochs, axis=1)[:, None]
    together = backaction_free_scores(record, blochs, waveform)
    alone = np.array([backaction_free_scores(record, row[None, :], waveform)[0] for row in blochs])
    assert np.array_equal(together, alone)
    scs_together, _ = scs_scores(record, blochs, waveform)
    scs_alone = np.array([scs_scores(record, row[None, :], waveform)[0][0] for row in blochs])
    assert np.array_equal(scs_together, scs_alone)


def test_girsanov_moments_for_constant_drift():
    rng = np.random.default_rng(42)
    dt, n_steps, paths = 0.01, 100, 1000
    total_time = dt * n_steps
    m0, delta = 0.3, 0.5
    base = MeanSignalSeries(np.full(n_steps, m0), dt)
    shifted = MeanSignalSeries(np.full(n_steps, m0 + delta), dt)

    values = np.empty(paths)
    for k in range(paths):
        dy = m0 * dt + rng.normal(0.0, math.sqrt(dt), n_steps)
        record = MeasurementRecord(dt=dt, increments=dy, kappa=1.0, num_qubits=1)
        values[k] = llr_general(record, shifted, base).value

    # λ = δ W_T − δ²T/2 under the reference drift
    sigma = delta * math.sqrt(total_time)
    assert abs(values.mean() + 0.5 * delta**2 * total_time) < 3.0 * sigma / math.sqrt(paths)
    ratios = np.exp(values)
    assert abs(ratios.mean() - 1.0) < 3.0 * ratios.std(ddof=1) / math.sqrt(paths)


def test_finite_step_density_differences_reduce_to_the_llr(record, rng):
    m1 = MeanSignalSeries(rng.normal(0.0, 2.0, record.n_steps), record.dt)
    m2 = MeanSignalSeries(rng.normal(0.0, 2.0, record.n_steps), record.dt)
    per_step = gaussian_step_log_density(record, m1)
    assert per_step.shape == (record.n_steps,)
    difference = float(np.sum(per_step - gaussian_step_log_density(record, m2)))
    llr = llr_general(record, m1, m2).value
    assert math.isclose(difference, llr, rel_tol=1e-6, abs_tol=1e-9)
    # the per-step densities themselves are dominated by the model-free shot-noise terms
    assert abs(float(np.sum(per_step))) > 100.0 * abs(llr)


def test_exact_and_scs_ratios_agree_for_one_qubit(truth_factory, waveform):
    record = truth_factory(1, waveform, seed=3).record
    a = BlochVector.from_angles(0.5, 1.0)
    b = BlochVector.from_angles(2.0, 3.0)
    exact = llr_exact(record, spin_coherent(a, 1), spin_coherent(b, 1), waveform)
    approx = llr_scs(record, a, b, waveform)
    assert exact.valid and approx.valid
    assert math.isclose(exact.value, approx.value, abs_tol=1e-6)


def test_validation_errors(record, waveform):
    short = MeanSignalSeries(np.zeros(3), record.dt)
    with pytest.raises(DimensionMismatchError):
        llr_general(record, short, short)
    with pytest.raises(InvalidStateError):
        backaction_free_scores(record, np.array([[0.5, 0.0, 0.0]]), waveform)
    with pytest.raises(InvalidStateError):
        LLRValue(value=math.nan)
    assert not LLRValue(value=math.nan, valid=False).valid
