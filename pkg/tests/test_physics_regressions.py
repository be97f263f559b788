"""Minutes-to-hours regressions of the simulated physics (opt-in: --run-slow / --full)."""

import numpy as np
import pytest

from spin_qst.campaign import full_campaign_config, run_campaign
from spin_qst.estimator import optimal_povm_infidelity
from spin_qst.studies import ApproxStudyConfig, SqueezeDemoConfig, run_approximation_study, run_squeezing_demo


@pytest.mark.slow
def test_scs_approximation_quality():
    with_controls = run_approximation_study(
        ApproxStudyConfig(qubit_counts=[25, 75, 100], trials=30, controls=[True]), threads=4
    )
    for n in (25, 75, 100):
        series = with_controls.series(n, True)
        assert min(p.mean_fidelity for p in series) > 0.75
        assert max(p.rms_z_error for p in series) < 0.12

    without = run_approximation_study(ApproxStudyConfig(qubit_counts=[100], trials=30, controls=[False]), threads=4)
    assert 0.3 <= without.series(100, False)[-1].mean_fidelity <= 0.6


@pytest.mark.slow
def test_monotone_squeezing_without_controls():
    result = run_squeezing_demo(SqueezeDemoConfig(num_qubits=75, with_controls=False))
    assert np.all(np.diff(result.squeezing_db) <= 1e-3)
    assert result.squeezing_db[-1] < -1.0


@pytest.mark.slow
def test_controls_undo_squeezing():
    def returns_to_zero(seed):
        result = run_squeezing_demo(SqueezeDemoConfig(num_qubits=75, with_controls=True, seed=seed))
        return abs(result.squeezing_db[-1]) < 1.0 and min(result.squeezing_db) <= -1.0

    assert returns_to_zero(0)
    assert sum(returns_to_zero(seed) for seed in range(5)) >= 3


@pytest.mark.full
def test_estimator_scaling_campaign():
    result = run_campaign(full_campaign_config(), threads=8)
    assert result.failed_fraction <= 0.05

    scs, baseline = result.fits["scs_mle"], result.fits["backaction_free"]
    assert -1.05 <= scs.b <= -0.75
    assert -0.80 <= baseline.b <= -0.45

    scs_100 = result.aggregate(100, "scs_mle").mean_infidelity
    baseline_100 = result.aggregate(100, "backaction_free").mean_infidelity
    assert optimal_povm_infidelity(100) < scs_100 < baseline_100

    gap_25 = result.aggregate(25, "backaction_free").mean_infidelity - result.aggregate(25, "scs_mle").mean_infidelity
    assert gap_25 < baseline_100 - scs_100
