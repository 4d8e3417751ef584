"""Command-line entry point: ``agilesd <subcommand> [--config FILE] ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict

from . import harness
from .flow_simulator import run_flow
from .markov_model import CcaParams, ModelError, average_throughput

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out", help="output path (directory for aacpt); stdout if omitted")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    p.add_argument("--jobs", type=int, default=None, help="parallel workers (joblib n_jobs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agilesd",
        description="Markov-chain throughput model, flow simulator and lambda_max tuner "
        "for NewReno / Agile-SD.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("model", "evaluate the Markov model at the configured point"),
        ("simulate", "run the flow simulator at the configured point"),
        ("sweep", "sweep one variable (model, simulator or both)"),
        ("validate", "compare model and simulator; nonzero exit if tolerances fail"),
        ("aacpt", "grid-search lambda_max per beta and write at_matrix/lambda_opt/fit"),
        ("trace", "dump the per-cycle trace of one simulator run"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        if name == "validate":
            p.add_argument("--median-tol", type=float, default=0.15)
            p.add_argument("--max-tol", type=float, default=0.30)
    return parser


def _emit(rows, args, columns=None):
    if args.out:
        harness.write_table(rows, args.out, columns, args.format)
    else:
        harness.write_table(rows, sys.stdout, columns, args.format)


def _seeds(cfg, args):
    return (args.seed,) if args.seed is not None else cfg.seeds


def cmd_model(cfg, args):
    rows = []
    for cca, params in (("agile", cfg.params), ("newreno", CcaParams.newreno(cfg.params.beta))):
        rep = average_throughput(cfg.network, params, cfg.iterations)
        rows.append(
            {
                "cca": cca,
                "beta": params.beta,
                "lambda_max": params.lambda_max,
                "max_window": rep.max_window,
                "n_states": rep.n_states,
                "iterations": rep.iterations,
                "ath_kbps": rep.ath_kbps,
                "normalized": rep.normalized_ath,
                "mean_window": rep.mean_window,
                "mean_lambda": rep.mean_lambda,
            }
        )
    _emit(rows, args)
    return 0


def cmd_simulate(cfg, args):
    rows = []
    for seed in _seeds(cfg, args):
        rep = run_flow(cfg.network, cfg.params, cfg.duration_s, seed)
        rows.append(
            {
                "seed": seed,
                "tatr_kbps": rep.tatr_kbps,
                "normalized": rep.normalized,
                "mean_epoch_s": rep.mean_epoch_duration_s,
                "random_losses": rep.loss_counts["random"],
                "congestion_losses": rep.loss_counts["congestion"],
                "epochs": len(rep.completed_epochs),
            }
        )
    _emit(rows, args)
    return 0


def _sweep_spec(cfg, args):
    if cfg.sweep is None:
        raise harness.ConfigError("sweep_variable", "the configuration defines no sweep")
    spec = cfg.sweep
    if args.seed is not None:
        spec.seeds = (args.seed,)
    return spec


def cmd_sweep(cfg, args):
    rows = harness.run_sweep(_sweep_spec(cfg, args), n_jobs=args.jobs)
    _emit(rows, args, harness.SWEEP_COLUMNS)
    return 0


def cmd_validate(cfg, args):
    if cfg.sweep is not None:
        spec = _sweep_spec(cfg, args)
        report = harness.compare_model_vs_sim(spec, n_jobs=args.jobs)
    else:
        report = harness.compare_points(
            [("point", cfg.network, cfg.params)],
            _seeds(cfg, args),
            cfg.duration_s,
            cfg.iterations,
            n_jobs=args.jobs,
        )
    rows = [asdict(p) for p in report.points]
    _emit(rows, args)
    ok = report.passed(args.median_tol, args.max_tol)
    print(
        f"median_rel_error={report.median_rel_error:.6g} max_rel_error={report.max_rel_error:.6g} "
        f"{'PASS' if ok else 'FAIL'}",
        file=sys.stderr,
    )
    return 0 if ok else 1


def cmd_aacpt(cfg, args):
    paths = harness.run_aacpt_command(cfg, args.out or ".", n_jobs=args.jobs)
    for name, path in paths.items():
        print(f"{name}: {path}", file=sys.stderr)
    return 0


def cmd_trace(cfg, args):
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    rep = run_flow(cfg.network, cfg.params, cfg.duration_s, seed)
    path = args.out or f"trace_seed{seed}.csv"
    harness.emit_trace(rep, path)
    print(f"trace: {path} ({sum(e.n_cycles for e in rep.epochs)} cycles)", file=sys.stderr)
    return 0


COMMANDS = {
    "model": cmd_model,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
    "aacpt": cmd_aacpt,
    "trace": cmd_trace,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        cfg = harness.load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ModelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
