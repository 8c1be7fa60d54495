"""Command-line interface.

Exit codes: 0 success, 1 invalid input or configuration, 2 identification
did not converge, 64 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import RunConfig, load_drive_cycle, write_drive_cycle
from .ecm import CellConfig, CellState, simulate
from .errors import EcmError
from .ident import build_schedule, identify_segments, segment_by_soc, validate_cases
from .morris import (
    EcmModel,
    LinearModel,
    MorrisConfig,
    ParameterDistribution,
    linear_demo_distribution,
    least_important,
    rank_parameters,
    run_morris,
)
from .ocv import OcvCurve, average_sweeps, fit_metrics, fit_polynomial, read_sweep_csv, write_sweep_csv
from .params import PARAM_NAMES, ParameterSchedule, ParameterSet, interval_label
from .synthetic import (
    discharge_test_cycle,
    generate_synthetic_cell,
    generate_synthetic_cycle,
    reference_ocv_sweeps,
    reference_truth_schedule,
)

log = logging.getLogger("ecmsense")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NOT_CONVERGED = 2
EXIT_USAGE = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_common(p):
    p.add_argument("--config", type=Path, help="run configuration file (INI)")
    p.add_argument("--seed", type=int, help="master seed, unsigned 64-bit")
    p.add_argument("--out", type=Path, help="output directory (default: the config's directory)")
    p.add_argument("--runs", type=int, help="Morris runs per interval")
    p.add_argument("--delta", type=float, help="Morris step in standard deviations")
    p.add_argument("--reduction", choices=("mean", "rms"), help="time reduction of voltage differences")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("--quiet", action="store_true", help="suppress tables on stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ecmsense", description="ECM simulation, identification and Morris screening")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit-ocv", help="average OCV sweeps and fit the polynomial")
    _add_common(p)

    p = sub.add_parser("simulate", help="simulate terminal voltage for a drive cycle")
    _add_common(p)
    p.add_argument("--cycle", type=Path, help="drive-cycle CSV (default: config drive_cycle)")
    p.add_argument("--schedule", type=Path, help="schedule file (default: config schedule)")

    p = sub.add_parser("identify", help="identify parameters per SOC interval")
    _add_common(p)

    p = sub.add_parser("morris", help="Morris / enhanced Morris screening per SOC interval")
    _add_common(p)

    p = sub.add_parser("validate", help="three-case replay of a validation cycle")
    _add_common(p)

    p = sub.add_parser("demo-linear", help="Morris on y = theta1 + 5*theta2")
    _add_common(p)

    p = sub.add_parser("gen-data", help="write a synthetic dataset and config")
    _add_common(p)
    return parser


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {"n_runs": args.runs, "delta": args.delta, "workers": args.workers}
    if args.reduction:
        overrides["reduction"] = args.reduction
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    cfg.seed = _seed(args.seed, cfg.seed)
    cfg.validate()
    return cfg


def _seed(flag, configured) -> int:
    if flag is not None:
        return flag
    if configured is not None:
        return configured
    env = os.environ.get("ECMSENSE_SEED")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise EcmError(f"ECMSENSE_SEED is not an integer: {env!r}") from exc
    return 0


def _out_dir(args, cfg: RunConfig) -> Path:
    out = args.out if args.out else (args.config.parent if args.config else Path.cwd())
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_summary(out: Path, name: str, data: dict) -> None:
    (out / f"{name}_summary.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _say(args, text=""):
    if not args.quiet:
        print(text)


def cmd_gen_data(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    cfg.base_dir = out
    seed = cfg.seed
    ss = np.random.SeedSequence(seed)
    s_train, s_noise, s_val, s_vnoise = (int(c.generate_state(1)[0]) for c in ss.spawn(4))
    q = cfg.capacity_q

    charge, discharge = reference_ocv_sweeps()
    write_sweep_csv(cfg.path("ocv_sweep_charge"), charge)
    write_sweep_csv(cfg.path("ocv_sweep_discharge"), discharge)
    avg = average_sweeps(charge, discharge)
    lo, hi = (v / 100.0 for v in cfg.ocv_fit_range_percent)
    truth_ocv = fit_polynomial(avg.restrict(lo, hi), cfg.ocv_degree)

    truth = reference_truth_schedule(cfg.soc_edges_percent)
    truth.save(out / "truth_schedule.json")
    n_blocks = len(cfg.soc_edges_percent) - 1
    block_soc = (cfg.soc_edges_percent[0] - cfg.soc_edges_percent[-1]) / 100.0 / n_blocks
    train = discharge_test_cycle(
        q, n_blocks=n_blocks, block_soc=block_soc, block_mean=cfg.block_mean_a,
        rest=cfg.rest_s, dt=cfg.dt, seed=s_train,
    )
    z0 = cfg.initial_soc_percent / 100.0
    v_train = generate_synthetic_cell(truth, truth_ocv, q, train, cfg.noise_rms_v, s_noise, z0)
    write_drive_cycle(cfg.path("drive_cycle"), train, v_train)

    duration = cfg.validation_soc_drop * q / cfg.validation_mean_a
    val = generate_synthetic_cycle("udc-like", duration, 1.0, s_val, cfg.dt, mean=cfg.validation_mean_a)
    v_val = generate_synthetic_cell(truth, truth_ocv, q, val, cfg.noise_rms_v, s_vnoise, z0)
    write_drive_cycle(cfg.path("validation_cycle"), val, v_val)

    config_path = out / "config.ini"
    cfg.save(config_path)
    _write_summary(out, "gen_data", {
        "seed": seed,
        "train_samples": len(train),
        "validation_samples": len(val),
        "noise_rms_v": cfg.noise_rms_v,
        "config": config_path.name,
    })
    _say(args, f"wrote synthetic dataset and {config_path}")
    return EXIT_OK


def cmd_fit_ocv(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    cfg.require("ocv_sweep_charge", "ocv_sweep_discharge")
    charge = read_sweep_csv(cfg.path("ocv_sweep_charge"), "charge")
    discharge = read_sweep_csv(cfg.path("ocv_sweep_discharge"), "discharge")
    avg = average_sweeps(charge, discharge)
    lo, hi = (v / 100.0 for v in cfg.ocv_fit_range_percent)
    fit_set = avg.restrict(lo, hi)
    curve = fit_polynomial(fit_set, cfg.ocv_degree)
    curve.save(out / "ocv_curve.json")
    fitted = curve.evaluate(fit_set.grid)
    _write_rows(
        out / "ocv_fit_residuals.csv",
        ["soc_percent", "voltage_v", "fitted_v", "residual_v"],
        ((float(z * 100), float(v), float(f), float(v - f)) for z, v, f in zip(fit_set.grid, fit_set.voltages, fitted)),
    )
    metrics = fit_metrics(curve, fit_set)
    check = avg.restrict(max(lo, 0.1), hi)
    metrics_10 = fit_metrics(curve, check)
    _write_summary(out, "fit_ocv", {
        "degree": curve.degree,
        "valid_range": list(curve.valid_range),
        "rmse_v": metrics["rmse"],
        "max_abs_v": metrics["max_abs"],
        "rmse_v_from_10pct": metrics_10["rmse"],
        "max_abs_v_from_10pct": metrics_10["max_abs"],
    })
    _say(args, f"OCV degree {curve.degree}: RMSE {metrics['rmse'] * 1e3:.3f} mV, max {metrics['max_abs'] * 1e3:.3f} mV")
    return EXIT_OK


def _curve(cfg: RunConfig) -> OcvCurve:
    cfg.require("ocv_curve")
    return OcvCurve.load(cfg.path("ocv_curve"))


def cmd_simulate(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    curve = _curve(cfg)
    cycle_path = args.cycle or cfg.path("drive_cycle")
    sched_path = args.schedule or cfg.path("schedule")
    cycle = load_drive_cycle(cycle_path, cfg.resample_dt)
    schedule = ParameterSchedule.load(sched_path)
    z0 = cfg.initial_soc_percent / 100.0
    trace = simulate(cycle.profile, CellConfig(cfg.capacity_q, curve, schedule), CellState.rested(z0))
    write_drive_cycle(out / "simulated.csv", cycle.profile, trace)
    summary = {"samples": len(trace), "dt_s": trace.dt, "final_soc": trace.final_state.z, "clamped": trace.clamped}
    if cycle.voltage is not None:
        err = trace.samples - cycle.voltage.samples
        summary["rmse_v"] = float(np.sqrt(np.mean(err**2)))
        summary["max_abs_v"] = float(np.max(np.abs(err)))
    _write_summary(out, "simulate", summary)
    _say(args, f"simulated {len(trace)} samples -> {out / 'simulated.csv'}")
    return EXIT_OK


def _segments(cfg: RunConfig):
    cfg.require("drive_cycle")
    cycle = load_drive_cycle(cfg.path("drive_cycle"), cfg.resample_dt)
    if cycle.voltage is None:
        raise EcmError(f"{cfg.path('drive_cycle')}: identification needs a voltage_v column")
    return segment_by_soc(
        cycle.profile, cycle.voltage, cfg.capacity_q, cfg.initial_soc_percent / 100.0,
        cfg.soc_edges_percent, cfg.rest_current_a, cfg.rest_duration_s,
    )


def cmd_identify(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    curve = _curve(cfg)
    segments = _segments(cfg)
    if not segments:
        raise EcmError("no complete SOC interval in the drive cycle")
    guess = None
    if cfg.init_guess:
        base = dict(tau1=10.0, tau2=100.0, c1=1000.0, c2=1000.0, rs=0.01)
        base.update(cfg.init_guess)
        guess = ParameterSet(**base)
    reports = identify_segments(
        segments, curve, cfg.capacity_q, guess, workers=cfg.workers,
        max_iter=cfg.max_iter, ftol=cfg.ftol, xtol=cfg.xtol,
    )
    schedule = build_schedule([(s.soc_interval, r) for s, r in zip(segments, reports)])
    schedule.save(out / "schedule.json")
    rows = []
    for seg, rep in zip(segments, reports):
        rows.append([interval_label(seg.soc_interval), len(seg.profile), *rep.params.as_array().tolist(),
                     rep.rmse, rep.max_abs, rep.iterations, str(rep.converged).lower()])
    _write_rows(
        out / "fit_reports.csv",
        ["soc_interval", "samples", *PARAM_NAMES, "rmse_v", "max_abs_v", "iterations", "converged"],
        rows,
    )
    converged = all(r.converged for r in reports)
    _write_summary(out, "identify", {
        "intervals": [interval_label(s.soc_interval) for s in segments],
        "converged": converged,
        "rmse_v": [r.rmse for r in reports],
        "means": schedule.means.as_dict(),
        "stdevs": schedule.stdev_set(),
    })
    if not args.quiet:
        print(f"{'interval':>12} " + " ".join(f"{n:>11}" for n in PARAM_NAMES) + f" {'rmse_mV':>8}")
        for seg, rep in zip(segments, reports):
            vals = " ".join(f"{v:11.5g}" for v in rep.params.as_array())
            print(f"{interval_label(seg.soc_interval):>12} {vals} {rep.rmse * 1e3:8.3f}")
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


def cmd_morris(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    curve = _curve(cfg)
    cfg.require("schedule")
    schedule = ParameterSchedule.load(cfg.path("schedule"))
    segments = _segments(cfg)
    by_interval = {s.soc_interval: s for s in segments}
    intervals = [iv for iv in schedule.interval_list if iv in by_interval]
    if not intervals:
        raise EcmError("schedule intervals do not match any drive-cycle segment")
    models = [
        EcmModel(by_interval[iv].profile, curve, cfg.capacity_q, CellState.rested(by_interval[iv].z_start))
        for iv in intervals
    ]
    if cfg.centre == "interval":
        params = dict(schedule.intervals)
        dists = [ParameterDistribution.centred_on(params[iv], schedule) for iv in intervals]
    else:
        dists = [ParameterDistribution.from_schedule(schedule)] * len(intervals)
    mcfg = MorrisConfig(cfg.n_runs, cfg.delta, cfg.seed, cfg.reduction, cfg.resample_on_invalid, cfg.workers)
    report = run_morris(dists, mcfg, models, intervals)
    report.write_csv(out / "sensitivity.csv")
    report.write_raw_csv(out / "sensitivity_raw.csv")
    ranking = rank_parameters(report)
    _write_summary(out, "morris", {
        "n_runs": mcfg.n_runs,
        "delta": mcfg.delta,
        "seed": mcfg.seed,
        "reduction": mcfg.reduction,
        "ranking": {interval_label(iv): names for iv, names in ranking.items()},
        "least_important": list(least_important(report)),
    })
    if not args.quiet:
        em = report.enhanced_mean
        print(f"{'interval':>12}  ranked by enhanced mean (mV)")
        for j, iv in enumerate(intervals):
            cells = ", ".join(f"{n} {em[j, report.names.index(n)] * 1e3:.3f}" for n in ranking[iv])
            print(f"{interval_label(iv):>12}  {cells}")
    return EXIT_OK


def _case2_fixed(cfg: RunConfig) -> tuple:
    if cfg.fixed_case2 != ("auto",):
        return cfg.fixed_case2
    cfg.require("sensitivity")
    totals = {n: 0.0 for n in PARAM_NAMES}
    with cfg.path("sensitivity").open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            totals[row["parameter"]] += float(row["enhanced_mean_v"])
    return tuple(sorted(PARAM_NAMES, key=lambda n: (totals[n], n))[:3])


def cmd_validate(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    curve = _curve(cfg)
    cfg.require("schedule", "validation_cycle")
    schedule = ParameterSchedule.load(cfg.path("schedule"))
    cycle = load_drive_cycle(cfg.path("validation_cycle"), cfg.resample_dt)
    if cycle.voltage is None:
        raise EcmError("validation cycle needs a voltage_v column")
    cases = {"case1": (), "case2": _case2_fixed(cfg), "case3": PARAM_NAMES}
    results = validate_cases(
        cycle.profile, cycle.voltage, schedule, curve, cases,
        q=cfg.capacity_q, z0=cfg.initial_soc_percent / 100.0,
    )
    _write_rows(
        out / "validation_metrics.csv",
        ["case", "fixed", "rmse_v", "max_abs_v"],
        ([r.name, " ".join(r.fixed), r.rmse, r.max_abs] for r in results),
    )
    times = cycle.profile.times
    _write_rows(
        out / "validation_errors.csv",
        ["case", "time_s", "error_v"],
        ([r.name, float(t), float(e)] for r in results for t, e in zip(times, r.error)),
    )
    rmse = [r.rmse for r in results]
    ordered = rmse[0] <= rmse[1] <= rmse[2]
    _write_summary(out, "validate", {
        "cases": {r.name: {"fixed": list(r.fixed), "rmse_v": r.rmse, "max_abs_v": r.max_abs} for r in results},
        "ordering_holds": ordered,
    })
    if not args.quiet:
        print(f"{'case':>6} {'rmse_mV':>9} {'max_mV':>9}  fixed")
        for r in results:
            print(f"{r.name:>6} {r.rmse * 1e3:9.3f} {r.max_abs * 1e3:9.3f}  {', '.join(r.fixed) or '-'}")
    return EXIT_OK


def cmd_demo_linear(args, cfg: RunConfig) -> int:
    dist = linear_demo_distribution()
    mcfg = MorrisConfig(cfg.n_runs, cfg.delta, cfg.seed, cfg.reduction, False, cfg.workers)
    report = run_morris(dist, mcfg, LinearModel(), ["linear"])
    if args.out:
        out = _out_dir(args, cfg)
        report.write_csv(out / "demo_linear.csv")
        report.write_raw_csv(out / "demo_linear_raw.csv")
    if not args.quiet:
        print(f"{'parameter':>9} {'morris_mean':>12} {'enhanced':>9} {'stdev':>9}")
        for i, name in enumerate(report.names):
            print(f"{name:>9} {report.morris_mean[0, i]:12.6g} {report.enhanced_mean[0, i]:9.6g} "
                  f"{report.stdev_of_xi[0, i]:9.3g}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "fit-ocv": cmd_fit_ocv,
    "simulate": cmd_simulate,
    "identify": cmd_identify,
    "morris": cmd_morris,
    "validate": cmd_validate,
    "demo-linear": cmd_demo_linear,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    if args.quiet:
        warnings.simplefilter("ignore")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except (EcmError, ValueError, FileNotFoundError) as exc:
        print(f"ecmsense {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
