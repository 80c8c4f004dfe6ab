"""Command line interface: ``proxnls run|sweep|table|history``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (
    EXIT_CODES,
    EXIT_CONFIG_ERROR,
    ConfigError,
    RunConfig,
    RunReport,
    emit_history,
    emit_table,
    run,
    sweep,
)

log = logging.getLogger("proxnls")


def _add_run_flags(p, lists=False):
    """Flags shared by run and sweep; sweep accepts comma lists."""
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--problem", help="group_lasso | svm | fh"
                   + (" (comma list)" if lists else ""))
    p.add_argument("--solver", help="r2 | lm | lmtr"
                   + (" (comma list)" if lists else ""))
    p.add_argument("--lambda", dest="lam", type=float, help="regularization weight")
    p.add_argument("--atol", type=float, help="absolute stopping tolerance")
    p.add_argument("--rtol", type=float, help="relative stopping tolerance")
    p.add_argument("--seed", help="random seed" + (" (comma list)" if lists else ""))
    p.add_argument("--max-inner", dest="max_inner", type=int)
    p.add_argument("--max-outer", dest="max_outer", type=int)
    p.add_argument("--mnist-dir", dest="mnist_dir", help="IDX files for the SVM problem")
    p.add_argument("--out", help="output directory")
    # problem-specific overrides
    p.add_argument("--m", type=int, help="group_lasso: observation count")
    p.add_argument("--n", type=int, help="group_lasso: signal length")
    p.add_argument("--groups", type=int, help="group_lasso: number of groups")
    p.add_argument("--active", type=int, help="group_lasso: active groups")
    p.add_argument("--noise", type=float, help="group_lasso: noise scale")
    p.add_argument("--features", type=int, help="svm: feature count")
    p.add_argument("--train-size", dest="train_size", type=int)
    p.add_argument("--test-size", dest="test_size", type=int)
    p.add_argument("--samples", type=int, help="fh: sample count")
    p.add_argument("--substeps", type=int, help="fh: integrator substeps per sample")


def _config_from_args(args, overrides=None):
    base = RunConfig.from_file(args.config) if args.config else RunConfig()
    updates = {}
    for name in RunConfig.__dataclass_fields__:
        val = getattr(args, name, None)
        if val is not None:
            updates[name] = val
    if overrides:
        updates.update(overrides)
    if "seed" in updates:
        updates["seed"] = int(updates["seed"])
    return replace(base, **updates)


def _print_report(report):
    print(emit_table([report]), end="")


def _cmd_run(args):
    cfg = _config_from_args(args)
    report = run(cfg)
    _print_report(report)
    return EXIT_CODES[report.status]


def _cmd_sweep(args):
    def split(value, default):
        if value is None:
            return [default]
        return [part.strip() for part in str(value).split(",") if part.strip()]

    base = _config_from_args(args)
    configs = []
    for problem in split(args.problem, base.problem):
        for solver in split(args.solver, base.solver):
            for seed in split(args.seed, base.seed):
                configs.append(replace(base, problem=problem, solver=solver,
                                       seed=int(seed)))
    out = args.out or "sweep_out"
    reports = sweep(configs, out, jobs=args.jobs)
    print(emit_table(reports), end="")
    return max((EXIT_CODES[r.status] for r in reports), default=0)


def _load_reports(paths):
    files = []
    for path in paths:
        p = Path(path)
        if p.is_dir():
            files.extend(sorted(p.glob("**/report.json")))
        else:
            files.append(p)
    if not files:
        raise ConfigError("no report files found")
    return [RunReport.from_dict(json.loads(f.read_text())) for f in files]


def _cmd_table(args):
    reports = _load_reports(args.reports)
    text = emit_table(reports, Path(args.out) if args.out else None)
    print(text, end="")
    return 0


def _cmd_history(args):
    reports = _load_reports([args.report])
    report = reports[0]
    out = Path(args.out) if args.out else Path(args.report).resolve().parent
    text = emit_history(report, out)
    from . import figures
    figures.save_history_figure(report.history, out / "history.png")
    if not args.quiet:
        print(text, end="")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="proxnls",
        description="Benchmark solvers for nonsmooth regularized nonlinear "
                    "least squares.")
    parser.add_argument("--verbose", "-v", action="store_true",
                        help="per-iteration logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one (problem, solver) configuration")
    _add_run_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a cross product of configurations")
    _add_run_flags(p_sweep, lists=True)
    p_sweep.add_argument("--jobs", type=int, default=1,
                         help="parallel worker processes")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_table = sub.add_parser("table", help="tabulate saved reports")
    p_table.add_argument("reports", nargs="+",
                         help="report.json files or directories to scan")
    p_table.add_argument("--out", help="directory for table.txt / table.csv")
    p_table.set_defaults(func=_cmd_table)

    p_hist = sub.add_parser("history", help="emit history CSV and figure")
    p_hist.add_argument("report", help="report.json file")
    p_hist.add_argument("--out", help="output directory (default: alongside)")
    p_hist.add_argument("--quiet", action="store_true")
    p_hist.set_defaults(func=_cmd_history)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
