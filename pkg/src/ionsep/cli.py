"""Command-line entry point: ``ionsep {simulate,precompensate,optimize,montecarlo,selftest}``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
"""

import argparse
import json
import os
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import NumericalFailure
from .benchmarks import compare, is_reference_setup
from .config import ConfigError, RunConfig, dump_config, parse_config
from .protocols import TRAJECTORY_COLUMNS, run_protocol
from .studies import (
    MonteCarloStudy,
    optimize_waveform,
    replace_config_segments,
)

SEED_ENV = "IONSEP_SEED"
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
COMMANDS = ("simulate", "precompensate", "optimize", "montecarlo", "selftest")


def build_id():
    """Git commit of the source tree, or ``"unknown"`` outside a checkout."""
    try:
        out = subprocess.run(["git", "rev-parse", "--short=12", "HEAD"], capture_output=True,
                             text=True, cwd=Path(__file__).parent, timeout=5, check=True)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, (tuple, set)):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, data):
    text = json.dumps(data, indent=2, sort_keys=True, default=_json_default)
    Path(path).write_text(text + "\n")


def write_trajectory(path, result):
    table = result.trajectory_table() + 0.0  # no "-0" entries
    np.savetxt(path, table, delimiter=",", header=",".join(TRAJECTORY_COLUMNS), comments="",
               fmt="%.12g")


def _provenance(run_config, seed_source):
    return {
        "version": __version__,
        "build": build_id(),
        "config": run_config.to_dict(),
        "seeds": {"montecarlo": run_config.montecarlo.seed, "source": seed_source},
    }


def _resolve(args):
    run_config = parse_config(args.config) if args.config else RunConfig()
    seed_source = "config"
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            run_config = run_config.with_seed(int(env, 0))
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
        seed_source = "environment"
    if args.seed is not None:
        run_config = run_config.with_seed(args.seed)
        seed_source = "command line"
    if args.dt is not None:
        if not args.dt > 0:
            raise ConfigError(f"--dt must be positive, got {args.dt}")
        run_config = run_config.with_dt(args.dt)
    return run_config, seed_source


def _occ_line(occ):
    return "n_op={:.4g} n_a={:.4g} n_b={:.4g}".format(*occ)


def _simulate(run_config, seed_source, out, mode=None):
    protocol = run_config.protocol
    if mode is not None:
        protocol = replace(protocol, mode=mode)
        run_config = replace(run_config, protocol=protocol)
    result = run_protocol(protocol)
    summary = _provenance(run_config, seed_source)
    if protocol.reversed:
        summary["reversal"] = result.summary()
        summary.update(result.forward.summary())
        result = result.forward
    else:
        summary.update(result.summary())
    if is_reference_setup(replace(protocol, reversed=False)):
        summary["reference_comparison"] = compare(result)
    write_trajectory(out / "trajectory.csv", result)
    write_json(out / "summary.json", summary)
    t = result.timing
    extra = "" if t["t_catch"] is None else f" t_catch={t['t_catch']:.4f}"
    return f"{protocol.mode}: {_occ_line(result.final_occupations)}{extra} t_f={t['t_f']:.4f}"


def _optimize(run_config, seed_source, out):
    protocol = replace(run_config.protocol, mode="onthefly")
    config_doc = json.loads(json.dumps(run_config.to_dict(), default=_json_default))

    def checkpoint(stage, simplex, values, free):
        write_json(out / "checkpoint.json", {"config": config_doc, "stage": stage,
                                             "simplex": simplex, "values": values,
                                             "free": free})

    opt = optimize_waveform(protocol, run_config.optimize, checkpoint)
    tuned = replace_config_segments(protocol, opt.segments)
    tuned_run = replace(run_config, protocol=tuned)
    result = run_protocol(tuned)
    (out / "optimized.yaml").write_text(dump_config(tuned_run))
    summary = _provenance(tuned_run, seed_source)
    summary.update(result.summary())
    summary["optimization"] = {
        "start_total": opt.start_total,
        "total": opt.total,
        "n_evals": opt.n_evals,
        "converged": opt.converged,
        "stages": opt.stages,
        "coefficients": opt.coefficients(),
    }
    write_trajectory(out / "trajectory.csv", result)
    write_json(out / "summary.json", summary)
    flag = "" if opt.converged else " (target not met)"
    return (f"optimize: total {opt.start_total:.4g} -> {opt.total:.4g} after {opt.n_evals} "
            f"evaluations{flag}")


def _montecarlo(run_config, seed_source, out):
    protocol = replace(run_config.protocol, mode="onthefly")
    mc = run_config.montecarlo
    study = MonteCarloStudy(protocol, mc.max_fractions, mc.n_samples, mc.seed).fit()
    report = {"seed": mc.seed, "n_samples": mc.n_samples,
              "levels": [r.to_dict() for r in study.reports_]}
    write_json(out / "report.json", report)
    result = run_protocol(protocol)
    summary = _provenance(run_config, seed_source)
    summary.update(result.summary())
    summary["montecarlo_runtime_s"] = [r.runtime_s for r in study.reports_]
    write_trajectory(out / "trajectory.csv", result)
    write_json(out / "summary.json", summary)
    parts = [f"f={r.max_fraction:g}: P0(op)={r.op_mean[0]:.3f} P00(ab)={r.ab_mean[0, 0]:.3f}"
             for r in study.reports_]
    return "montecarlo: " + "; ".join(parts)


def _selftest():
    from .selftest import run_selftest

    results = run_selftest()
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    n_ok = sum(ok for _, ok, _ in results)
    return n_ok == len(results), f"selftest: {n_ok}/{len(results)} checks passed"


def build_parser():
    parser = argparse.ArgumentParser(prog="ionsep",
                                     description="Ion-crystal separation simulations.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "selftest":
            continue
        p.add_argument("--config", help="YAML config path or bundled name "
                                        "(bmb_section3, bmb_section4)")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, help=f"Monte-Carlo seed (overrides ${SEED_ENV})")
        p.add_argument("--dt", type=float, help="integration step in us")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            ok, line = _selftest()
            print(line)
            return EXIT_OK if ok else EXIT_NUMERICAL
        run_config, seed_source = _resolve(args)
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {str(out)!r}: {exc.strerror}") \
                from None
        if args.command == "simulate":
            line = _simulate(run_config, seed_source, out)
        elif args.command == "precompensate":
            line = _simulate(run_config, seed_source, out, mode="precompensated")
        elif args.command == "optimize":
            line = _optimize(run_config, seed_source, out)
        else:
            line = _montecarlo(run_config, seed_source, out)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"{line} -> {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
