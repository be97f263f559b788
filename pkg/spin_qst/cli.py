"""
Command-line entry point.

    spin-qst simulate      one truth record from an SCS (record.msgpack, record_<trial>.csv, waveform.json)
    spin-qst estimate      SCS-MLE or backaction-free estimate from a saved record
    spin-qst campaign      Monte Carlo estimator campaign with power-law fit (--full for desk scale)
    spin-qst approx-study  SCS filter against the exact CSE, with and without controls
    spin-qst squeeze-demo  measurement-induced squeezing of the SCS along x
    spin-qst fit           refit a power law to a rows.csv

Exit codes: 0 success, 2 configuration error, 3 too many failed trials.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from spin_qst import seeds
from spin_qst.campaign import (
    FAILURE_BUDGET,
    CampaignConfig,
    aggregate_rows,
    full_campaign_config,
    rows_from_csv,
    run_campaign,
    shared_waveform,
    write_campaign,
)
from spin_qst.collective_spin import BlochVector, qubit_fidelity
from spin_qst.config import load_config, load_settings
from spin_qst.errors import ConfigError, SpinQSTError
from spin_qst.estimator import EstimatorConfig, estimate_history, optimal_povm_infidelity, run_estimator, sample_sphere
from spin_qst.io import read_csv, write_csv, write_json, write_run_metadata
from spin_qst.studies import (
    ApproxStudyConfig,
    SqueezeDemoConfig,
    run_approximation_study,
    run_squeezing_demo,
    write_approx_study,
    write_squeezing_demo,
)
from spin_qst.trajectory import ControlWaveform, MeasurementRecord, TrajectoryConfig, random_waveform, simulate_truth

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILURES = 3


class SimulateConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    num_qubits: int = Field(25, ge=1)
    kappa: float = Field(1.0, gt=0.0)
    total_time: float = Field(0.8, gt=0.0)
    dt: float = Field(1e-4, gt=0.0)
    num_rotations: int = Field(40, ge=0)
    larmor: float = Field(25 * math.pi, gt=0.0)
    theta: float | None = Field(None, description="Polar angle of the true state; random when unset")
    phi: float | None = Field(None, description="Azimuth of the true state; random when unset")
    trial: int = Field(0, ge=0)
    master_seed: int = 0
    max_norm_drift: float = Field(1e-3, gt=0.0)

    @model_validator(mode="after")
    def _check_angles(self) -> SimulateConfig:
        if (self.theta is None) != (self.phi is None):
            raise ConfigError("give both theta and phi, or neither")
        return self


# ==========================================
# 1. Subcommands
# ==========================================

def cmd_simulate(args, out: Path, threads: int) -> int:
    config = load_config(SimulateConfig, args.config, {"master_seed": args.seed})
    n, trial, seed = config.num_qubits, config.trial, config.master_seed
    if config.theta is None:
        truth = BlochVector.from_array(sample_sphere(1, seeds.stream(seed, seeds.TRUTH_STATE, n, trial))[0])
    else:
        truth = BlochVector.from_angles(config.theta, config.phi)
    waveform = random_waveform(config.num_rotations, config.larmor, seeds.shared_waveform_stream(seed))
    traj = TrajectoryConfig(
        num_qubits=n,
        kappa=config.kappa,
        total_time=config.total_time,
        dt=config.dt,
        rng_seed=seed,
        max_norm_drift=config.max_norm_drift,
    )
    run = simulate_truth(truth, traj, waveform, seeds.stream(seed, seeds.TRUTH_NOISE, n, trial))

    out.mkdir(parents=True, exist_ok=True)
    (out / "record.msgpack").write_bytes(run.record.to_msgpack())
    run.record.write_csv(out / f"record_{trial}.csv")
    (out / "waveform.json").write_text(waveform.to_json() + "\n")
    write_json(
        out / "truth.json",
        {"truth": [truth.x, truth.y, truth.z], "trial": trial, "max_norm_residual": run.max_norm_residual},
    )
    logger.info("--- [CLI] simulated N=%d, %d steps into %s", n, run.record.n_steps, out)
    return EXIT_OK


def _read_record(path: Path) -> MeasurementRecord:
    if path.suffix == ".csv":
        return MeasurementRecord.read_csv(path)
    return MeasurementRecord.from_msgpack(path.read_bytes())


def cmd_estimate(args, out: Path, threads: int) -> int:
    config = load_config(EstimatorConfig, args.config, {"rng_seed": args.seed})
    record = _read_record(Path(args.record))
    waveform = ControlWaveform.from_json(Path(args.waveform).read_text()) if args.waveform else ControlWaveform.empty()
    report = run_estimator(args.kind, record, waveform, config)

    payload = report.model_dump(mode="json", exclude={"llr_tables"})
    if args.truth:
        truth = BlochVector(*json.loads(Path(args.truth).read_text())["truth"])
        payload["infidelity"] = 1.0 - qubit_fidelity(truth, report.estimate_vector)
    write_json(out / "estimate.json", payload)
    for table in report.llr_tables:
        table.write_csv(out / f"llr_stage{table.stage}.csv")

    if args.history:
        times = [float(t) for t in args.history.split(",") if t]
        history = estimate_history(record, waveform, config, times, args.kind)
        write_csv(
            out / "history.csv",
            ("t", "est_x", "est_y", "est_z", "n_invalid"),
            ((t, *rep.estimate, rep.n_invalid) for t, rep in history),
        )
    logger.info("--- [CLI] %s estimate %s", args.kind, report.estimate)
    return EXIT_OK


def cmd_campaign(args, out: Path, threads: int) -> int:
    overrides = {"master_seed": args.seed}
    if args.kind:
        overrides["estimator_kinds"] = ["scs_mle", "backaction_free"] if args.kind == "both" else [args.kind]
    if args.full:
        config = full_campaign_config(**{k: v for k, v in overrides.items() if v is not None})
    else:
        config = load_config(CampaignConfig, args.config, overrides)
    result = run_campaign(config, threads=threads, diagram=out / "campaign.mmd")
    write_campaign(result, out, shared_waveform(config) if not config.fresh_waveform_per_trial else None)
    for agg in result.aggregates:
        logger.info(
            "--- [CLI] N=%d %s: 1-F = %s ± %s (%d failed)",
            agg.num_qubits, agg.kind, agg.mean_infidelity, agg.std_error, agg.n_failed,
        )
    if result.failed_fraction > FAILURE_BUDGET:
        logger.error("--- [CLI] %.1f%% of trials failed", 100.0 * result.failed_fraction)
        return EXIT_FAILURES
    return EXIT_OK


def cmd_approx_study(args, out: Path, threads: int) -> int:
    config = load_config(ApproxStudyConfig, args.config, {"master_seed": args.seed})
    result = run_approximation_study(config, threads=threads, diagram=out / "approx_study.mmd")
    write_approx_study(result, out)
    total = len(config.qubit_counts) * len(config.controls) * config.trials
    if result.n_failed > FAILURE_BUDGET * total:
        return EXIT_FAILURES
    return EXIT_OK


def cmd_squeeze_demo(args, out: Path, threads: int) -> int:
    overrides = {"seed": args.seed}
    if args.controls is not None:
        overrides["with_controls"] = args.controls
    config = load_config(SqueezeDemoConfig, args.config, overrides)
    result = run_squeezing_demo(config)
    write_squeezing_demo(result, out)
    logger.info("--- [CLI] final squeezing %.2f dB", result.squeezing_db[-1])
    return EXIT_OK


def cmd_fit(args, out: Path, threads: int) -> int:
    rows = rows_from_csv(read_csv(Path(args.rows)))
    kinds = sorted({r.kind for r in rows})
    aggregates, fits = aggregate_rows(rows, kinds)
    write_json(
        out / "fit.json",
        {
            "fits": {k: (v.model_dump() if v else None) for k, v in fits.items()},
            "optimal_povm": {
                "b": -1.0,
                "bound": {str(n): optimal_povm_infidelity(n) for n in sorted({a.num_qubits for a in aggregates})},
            },
        },
    )
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "campaign": cmd_campaign,
    "approx-study": cmd_approx_study,
    "squeeze-demo": cmd_squeeze_demo,
    "fit": cmd_fit,
}


# ==========================================
# 2. Parser & main
# ==========================================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file; unknown keys are rejected")
    common.add_argument("--seed", type=int, help="Master seed (overrides the config file)")
    common.add_argument("--out", type=Path, help="Output directory (default: $SPIN_QST_OUTPUT_DIR or results)")
    common.add_argument("--threads", type=int, help="Concurrent trial workers (default: $SPIN_QST_THREADS or 1)")
    common.add_argument("--log-level", help="Logging level (default: $SPIN_QST_LOG_LEVEL or INFO)")

    parser = argparse.ArgumentParser(prog="spin-qst", description="Continuous-measurement qubit tomography")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="Generate one truth record")

    p = sub.add_parser("estimate", parents=[common], help="Estimate the initial state from a record")
    p.add_argument("--record", required=True, help="record.msgpack or record_<trial>.csv")
    p.add_argument("--waveform", help="waveform.json (no controls when omitted)")
    p.add_argument("--kind", choices=["scs_mle", "backaction_free"], default="scs_mle")
    p.add_argument("--truth", help="truth.json, to report the infidelity")
    p.add_argument("--history", help="Comma-separated times for estimates from truncated records")

    p = sub.add_parser("campaign", parents=[common], help="Estimator scaling campaign")
    p.add_argument("--kind", choices=["scs_mle", "backaction_free", "both"])
    p.add_argument("--full", action="store_true", help="N = 25, 55, 100 with 200 trials each, both estimators")

    sub.add_parser("approx-study", parents=[common], help="SCS approximation quality")

    p = sub.add_parser("squeeze-demo", parents=[common], help="Measurement-induced squeezing")
    p.add_argument("--controls", action=argparse.BooleanOptionalAction, default=None)

    p = sub.add_parser("fit", parents=[common], help="Power-law fit of a rows.csv")
    p.add_argument("--rows", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    # [Setup]: .env 只提供默认值，命令行参数优先
    try:
        settings = load_settings()
    except ValidationError as exc:
        print(f"invalid environment settings: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(
        level=(args.log_level or settings.log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    out = args.out or settings.output_dir
    threads = args.threads or settings.threads
    started = datetime.now(timezone.utc)

    # 配置错误 -> 2，数值失败 -> 3
    try:
        out.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[args.command](args, out, threads)
    except (ConfigError, ValidationError) as exc:
        logger.error("--- [CLI] configuration error: %s", exc)
        return EXIT_CONFIG
    except SpinQSTError as exc:
        logger.error("--- [CLI] %s failed: %s", args.command, exc)
        return EXIT_FAILURES

    # run_metadata.json 是唯一带时间戳的文件，其余输出逐字节可复现
    write_run_metadata(out, args.command, started, threads, exit_code=code)
    return code


if __name__ == "__main__":
    sys.exit(main())
