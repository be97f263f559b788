import math

import numpy as np
import pytest
from pydantic import ValidationError

from spin_qst import seeds
from spin_qst.campaign import (
    ROWS_HEADER,
    CampaignConfig,
    TrialRow,
    aggregate_rows,
    rows_from_csv,
    run_campaign,
    write_campaign,
)
from spin_qst.errors import ConfigError
from spin_qst.fitting import fit_power_law
from spin_qst.graph import build_trial_graph, run_trial_graph, write_graph_diagram
from spin_qst.io import read_csv
from spin_qst.studies import (
    ApproxStudyConfig,
    ApproxTrial,
    SqueezeDemoConfig,
    run_approximation_study,
    run_squeezing_demo,
    summarize_approx,
)

SMOKE = {
    "qubit_counts": [3, 6],
    "trials_per_n": 3,
    "dt": 1e-3,
    "estimator": {"m1_count": 20, "m2_count": 20, "baseline_count": 60},
    "estimator_kinds": ["scs_mle", "backaction_free"],
    "master_seed": 17,
}


# ==========================================
# Power-law fit
# ==========================================

def test_power_law_fit_recovers_exact_data():
    ns = [25, 40, 55, 70, 85, 100]
    fit = fit_power_law(ns, [2.0 / n for n in ns])
    assert math.isclose(fit.a, 2.0, abs_tol=1e-10)
    assert math.isclose(fit.b, -1.0, abs_tol=1e-10)
    assert fit.b_err < 1e-10
    assert fit.n_points == 6


def test_power_law_fit_under_lognormal_noise():
    rng = np.random.default_rng(0)
    ns = np.array([25, 40, 55, 70, 85, 100], dtype=float)
    slopes = [fit_power_law(ns, ns**-1.0 * np.exp(rng.normal(0.0, 0.1, ns.size))).b for _ in range(100)]
    assert abs(np.mean(slopes) + 1.0) < 0.05
    assert np.mean(np.abs(np.array(slopes) + 1.0) < 0.25) > 0.9


def test_power_law_fit_preconditions():
    with pytest.raises(ConfigError):
        fit_power_law([10, 20], [0.1, 0.05])
    with pytest.raises(ConfigError):
        fit_power_law([10, 20, 30], [0.1, 0.0, 0.05])


# ==========================================
# Seeds & graph
# ==========================================

def test_seed_streams_depend_only_on_coordinates():
    a = seeds.stream(5, seeds.TRUTH_NOISE, 25, 3).normal(size=4)
    b = seeds.stream(5, seeds.TRUTH_NOISE, 25, 3).normal(size=4)
    c = seeds.stream(5, seeds.TRUTH_NOISE, 25, 4).normal(size=4)
    d = seeds.stream(5, seeds.TRUTH_STATE, 25, 3).normal(size=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_trial_graph_maps_and_reduces(tmp_path):
    graph = build_trial_graph(
        plan=lambda n: [{"i": i} for i in range(n)],
        work=lambda task: [task["i"] ** 2],
        reduce=lambda rows: sorted(rows),
    )
    assert run_trial_graph(graph, 5, num_tasks=5, threads=3) == [0, 1, 4, 9, 16]
    path = write_graph_diagram(graph, tmp_path / "graph.mmd")
    assert path is not None
    assert "run_trial" in path.read_text()


# ==========================================
# Campaign
# ==========================================

def test_campaign_config_validation():
    with pytest.raises(ValidationError):
        CampaignConfig(unknown_key=1)
    with pytest.raises(ValidationError):
        CampaignConfig(num_rotations=30)
    with pytest.raises(ValidationError):
        CampaignConfig(qubit_counts=[0])
    with pytest.raises(ValidationError):
        CampaignConfig(dt=3e-3)


def test_campaign_smoke_is_thread_independent(tmp_path):
    config = CampaignConfig.model_validate(SMOKE)
    serial = run_campaign(config, threads=1)
    parallel = run_campaign(config, threads=4)

    assert len(serial.rows) == 2 * 3 * 2
    for one, other in zip(serial.rows, parallel.rows):
        assert (one.num_qubits, one.trial, one.kind) == (other.num_qubits, other.trial, other.kind)
        assert one.estimate == other.estimate
        assert one.infidelity == other.infidelity
    assert [r.num_qubits for r in serial.rows] == sorted(r.num_qubits for r in serial.rows)
    assert all(0.0 <= r.infidelity <= 1.0 for r in serial.rows if not r.failed)

    # aggregates are consistent with the rows they came from
    for agg in serial.aggregates:
        values = np.array(
            [r.infidelity for r in serial.rows if r.num_qubits == agg.num_qubits and r.kind == agg.kind]
        )
        assert math.isclose(agg.mean_infidelity, values.mean())
        assert math.isclose(agg.std_error, math.sqrt(values.var(ddof=1) / values.size))
        assert agg.optimal_bound == 1.0 / (agg.num_qubits + 2)
    assert serial.fits == {"scs_mle": None, "backaction_free": None}


def test_campaign_files_round_trip(tmp_path):
    config = CampaignConfig.model_validate({**SMOKE, "qubit_counts": [2, 3, 4], "trials_per_n": 2})
    result = run_campaign(config, estimator_kind="scs_mle")
    write_campaign(result, tmp_path)

    with open(tmp_path / "rows.csv") as f:
        assert f.readline().strip() == ",".join(ROWS_HEADER)
    rows = rows_from_csv(read_csv(tmp_path / "rows.csv"))
    assert [(r.num_qubits, r.trial, r.infidelity) for r in rows] == [
        (r.num_qubits, r.trial, r.infidelity) for r in result.rows
    ]
    aggregates, fits = aggregate_rows(rows, ["scs_mle"])
    assert [a.mean_infidelity for a in aggregates] == [a.mean_infidelity for a in result.aggregates]
    assert fits["scs_mle"] is not None
    assert (tmp_path / "aggregate.json").exists() and (tmp_path / "fit.json").exists()


def test_std_error_with_one_or_no_successful_trials():
    up = (0.0, 0.0, 1.0)
    rows = [
        TrialRow(num_qubits=5, trial=0, kind="scs_mle", truth=up, estimate=up, infidelity=0.02),
        TrialRow(num_qubits=5, trial=1, kind="scs_mle", truth=up, error="SCS filter broke down"),
        TrialRow(num_qubits=7, trial=0, kind="scs_mle", truth=up, error="SCS filter broke down"),
    ]
    aggregates, fits = aggregate_rows(rows, ["scs_mle"])
    by_n = {a.num_qubits: a for a in aggregates}
    assert (by_n[5].n_trials, by_n[5].n_failed) == (1, 1)
    assert by_n[5].mean_infidelity == 0.02
    assert by_n[5].std_error == 0.0
    assert by_n[7].mean_infidelity is None
    assert by_n[7].std_error is None
    assert fits["scs_mle"] is None


def test_fresh_waveform_policy_changes_records():
    shared = run_campaign(CampaignConfig.model_validate({**SMOKE, "qubit_counts": [3], "trials_per_n": 2}))
    fresh = run_campaign(
        CampaignConfig.model_validate({**SMOKE, "qubit_counts": [3], "trials_per_n": 2, "fresh_waveform_per_trial": True})
    )
    assert [r.truth for r in shared.rows] == [r.truth for r in fresh.rows]
    assert [r.estimate for r in shared.rows] != [r.estimate for r in fresh.rows]


# ==========================================
# Studies
# ==========================================

def test_single_qubit_approximation_is_exact():
    config = ApproxStudyConfig(qubit_counts=[1], trials=3, dt=1e-3)
    result = run_approximation_study(config, threads=2)
    assert result.n_failed == 0
    for controls in (True, False):
        series = result.series(1, controls)
        assert len(series) == len(config.sample_steps)
        assert all(abs(p.mean_fidelity - 1.0) < 1e-6 for p in series)
        assert all(p.rms_z_error < 1e-6 for p in series)


def test_approximation_study_outputs_are_bounded():
    config = ApproxStudyConfig(qubit_counts=[2, 4, 8], trials=2, dt=1e-3, controls=[False])
    result = run_approximation_study(config)
    assert all(0.0 <= p.mean_fidelity <= 1.0 for p in result.points)
    assert set(result.final_fidelity_rank_correlation) == {"no_controls"}


def test_approximation_summary_reports_per_time_rms():
    config = ApproxStudyConfig(qubit_counts=[4], trials=2, dt=1e-3, controls=[False], sample_every=400)
    assert config.sample_steps == [0, 400, 800]
    trials = [
        # J = 2: ⟨Jz⟩/J − z is (0, 0.1, −0.1) and (0, 0.1, 0.2)
        ApproxTrial(num_qubits=4, with_controls=False, trial=0, fidelity=[1.0, 0.9, 0.8],
                    exact_jz=[2.0, 1.0, 0.0], scs_z=[1.0, 0.4, 0.1]),
        ApproxTrial(num_qubits=4, with_controls=False, trial=1, fidelity=[1.0, 0.7, 0.6],
                    exact_jz=[2.0, -1.0, 1.0], scs_z=[1.0, -0.6, 0.3]),
        ApproxTrial(num_qubits=4, with_controls=False, trial=2, fidelity=[], exact_jz=[], scs_z=[],
                    error="SCS filter broke down"),
    ]
    result = summarize_approx(trials, config)
    series = result.series(4, False)
    assert result.n_failed == 1
    assert [p.t for p in series] == pytest.approx([0.0, 0.4, 0.8])
    assert [p.mean_fidelity for p in series] == pytest.approx([1.0, 0.8, 0.7])
    assert [p.rms_z_error for p in series] == pytest.approx([0.0, 0.1, math.sqrt(0.025)])


def test_squeezing_demo_snapshots():
    config = SqueezeDemoConfig(num_qubits=10, dt=1e-3, q_grid=(61, 120))
    result = run_squeezing_demo(config)
    assert abs(result.squeezing_db[0]) < 1e-7
    assert result.squeezing_db[-1] < 0.0
    assert [s.t for s in result.snapshots] == [0.0, 0.03, 0.1, 0.2]
    first = result.snapshots[0]
    peak = int(np.argmax(first.q))
    assert math.isclose(first.theta[peak], math.pi / 2, abs_tol=1e-12)
    assert first.phi[peak] == 0.0
    assert np.allclose(result.mean_spin[0], (1.0, 0.0, 0.0))
    # without controls the κ = 0 reference never moves
    assert np.allclose(result.mean_spin_free, [(1.0, 0.0, 0.0)] * len(result.times))


def test_squeezing_demo_validation():
    with pytest.raises(ValidationError):
        SqueezeDemoConfig(snapshot_times=[0.5])
    with pytest.raises(ValidationError):
        SqueezeDemoConfig(with_controls=True, num_rotations=4)
