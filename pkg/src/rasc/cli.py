"""``rasc`` command line.

Exit status: 0 when every verdict passes, 2 on usage or configuration
errors, 3 when at least one verdict fails.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness as H
from .ingest import RecordingFormatError, StandInSpec, inject_drift, make_standin, save_recording

EXIT_OK, EXIT_USAGE, EXIT_VERDICT = 0, 2, 3


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers: %r" % text) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of dotted keys, e.g. {\"rasc.eta\": 4}")
    common.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                        help="override one config key (repeatable)")
    common.add_argument("--out", default="rasc_out", help="output directory (default: %(default)s)")
    common.add_argument("--runs", type=int, help="Monte Carlo runs per setting")
    common.add_argument("--seed-base", type=int, help="seed of run 0")
    common.add_argument("--full", action="store_true", help="lift the 10-run cap on 32x32 grids")
    common.add_argument("--jobs", type=int, help="worker processes")
    common.add_argument("--timing", action="store_true", help="add wall-clock columns (not reproducible)")

    p = argparse.ArgumentParser(prog="rasc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="RASC vs oracles across grid sizes")
    sub.add_parser("baselines", parents=[common], help="all comparison methods, paired seeds")
    sp = sub.add_parser("sweep", parents=[common], help="sensitivity to one hyperparameter")
    sp.add_argument("--parameter", choices=sorted(H.SWEEP_DEFAULTS))
    sp.add_argument("--values", type=_floats)
    sp = sub.add_parser("faults", parents=[common], help="node failure x packet loss heatmap")
    sp.add_argument("--failure-rates", type=_floats)
    sp.add_argument("--loss-rates", type=_floats)
    sub.add_parser("theory", parents=[common], help="convergence and breakdown checks")
    sp = sub.add_parser("stress", parents=[common], help="inject drift into a recording and recover it")
    sp.add_argument("--recording", help="recording CSV (default: synthetic stand-in)")
    sp = sub.add_parser("calibrate", parents=[common], help="calibrate a recording")
    sp.add_argument("recording")
    sp = sub.add_parser("standin", parents=[common], help="write a synthetic stand-in recording")
    sp.add_argument("--drift", action="store_true", help="also write a drift-injected copy")
    return p


def _overrides(args) -> dict:
    o = {}
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            raise H.ConfigError("--set expects KEY=VALUE, got %r" % item)
        try:
            o[key] = json.loads(val)
        except json.JSONDecodeError:
            o[key] = val
    if args.runs is not None:
        o["run.runs"] = args.runs
    if args.seed_base is not None:
        o["run.seed_base"] = args.seed_base
    if args.full:
        o["run.full"] = True
    if args.jobs is not None:
        o["run.jobs"] = args.jobs
    if args.timing:
        o["run.timing"] = True
    if args.command == "sweep":
        if args.parameter:
            o["sweep.parameter"] = args.parameter
        if args.values:
            o["sweep.values"] = args.values
    if args.command == "faults":
        if args.failure_rates is not None:
            o["faults.failure_rates"] = args.failure_rates
        if args.loss_rates is not None:
            o["faults.loss_rates"] = args.loss_rates
    if args.command == "stress" and args.recording:
        o["stress.recording"] = args.recording
    return o


def _report(result, out, paths):
    for v in result.verdicts:
        print("%s %-34s %s (target %s)" % ("PASS" if v.passed else "FAIL", v.name, H._cell(v.value), v.target))
    for p in paths:
        print("wrote %s" % p)
    return EXIT_OK if result.ok else EXIT_VERDICT


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        o = _overrides(args)
        cfg = H.ExperimentConfig.load(args.config, o) if args.config else H.ExperimentConfig.from_flat(o)
        out = Path(args.out)
        if args.command == "standin":
            layout, series, _ = make_standin(cfg.standin)
            paths = [save_recording(out / "standin.csv", series, layout, rate_hz=cfg.standin.rate_hz)]
            if args.drift:
                drifted, _ = inject_drift(series, tuple(cfg["stress.gain_range"]), tuple(cfg["stress.offset_range"]),
                                          cfg["stress.drift_seed"])
                paths.append(save_recording(out / "standin_drift.csv", drifted, layout, rate_hz=cfg.standin.rate_hz))
            for p in paths:
                print("wrote %s" % p)
            return EXIT_OK
        if args.command == "calibrate":
            result = H.run_calibrate(cfg, args.recording)
            paths = H.write_tables(result, cfg, "calibrate", out)
            p = out / "calibrate_series.csv"
            p.write_text(result.calibrated_text, encoding="utf-8")
            paths.append(p)
            return _report(result, out, paths)
        result = H.EXPERIMENTS[args.command](cfg)
    except (H.ConfigError, RecordingFormatError, FileNotFoundError) as e:
        print("rasc: error: %s" % e, file=sys.stderr)
        return EXIT_USAGE
    paths = H.write_tables(result, cfg, args.command, out)
    return _report(result, out, paths)


if __name__ == "__main__":
    sys.exit(main())
