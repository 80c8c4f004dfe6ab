"""Benchmark harness: configure (problem, solver) pairs, run them and emit
statistics tables, convergence histories and figures.

Reports are deterministic for a given (config, seed): wall-clock timing is
kept out of report.json and written to a sidecar instead.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np

from .core import SolverOptions
from .problems import (
    find_mnist_files,
    load_mnist_idx,
    make_fh,
    make_group_lasso,
    make_svm,
    svm_accuracy,
    synthetic_svm_data,
)
from .solvers import lm_solve, lmtr_solve, r2_minimize

__all__ = ["ConfigError", "RunConfig", "RunReport", "run", "sweep",
           "emit_table", "emit_history", "EXIT_CODES"]

log = logging.getLogger(__name__)

PROBLEMS = ("group_lasso", "svm", "fh")
SOLVERS = {"r2": r2_minimize, "lm": lm_solve, "lmtr": lmtr_solve}

# per-problem weight and tolerance defaults; fh uses a tighter absolute
# tolerance than group_lasso/svm so the ell-1 prox zeroes the inactive
# parameters before the outer test fires
PROBLEM_DEFAULTS = {
    "group_lasso": dict(lam=1e-2, atol=1e-4, rtol=1e-4),
    "svm": dict(lam=1e-1, atol=1e-4, rtol=1e-4),
    "fh": dict(lam=10.0, atol=1e-3, rtol=1e-4),
}
SOLVER_MAX_OUTER = {"r2": 20000, "lm": 500, "lmtr": 500}

EXIT_CODES = {"first-order": 0, "max-iter": 2, "stalled": 3}
EXIT_CONFIG_ERROR = 64


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass
class RunConfig:
    """One benchmark run; None fields fall back to per-problem defaults."""

    problem: str = "group_lasso"
    solver: str = "lmtr"
    lam: float | None = None
    atol: float | None = None
    rtol: float | None = None
    seed: int = 0
    max_inner: int | None = None
    max_outer: int | None = None
    mnist_dir: str | None = None
    out: str | None = None
    # group lasso overrides
    m: int | None = None
    n: int | None = None
    groups: int | None = None
    active: int | None = None
    noise: float | None = None
    # svm overrides
    features: int | None = None
    train_size: int | None = None
    test_size: int | None = None
    # fh overrides
    samples: int | None = None
    substeps: int | None = None

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; pick from {PROBLEMS}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"unknown solver {self.solver!r}; pick from {tuple(SOLVERS)}")
        for name in ("lam", "atol", "rtol"):
            val = getattr(self, name)
            if val is not None and val <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("max_inner", "max_outer"):
            val = getattr(self, name)
            if val is not None and val < 1:
                raise ConfigError(f"{name} must be at least 1")
        return self

    def resolved(self):
        """Fill None fields from problem/solver defaults."""
        defaults = PROBLEM_DEFAULTS[self.problem]
        cfg = replace(self)
        if cfg.lam is None:
            cfg.lam = defaults["lam"]
        if cfg.atol is None:
            cfg.atol = defaults["atol"]
        if cfg.rtol is None:
            cfg.rtol = defaults["rtol"]
        if cfg.max_inner is None:
            cfg.max_inner = 100
        if cfg.max_outer is None:
            cfg.max_outer = SOLVER_MAX_OUTER[cfg.solver]
        return cfg

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None and k != "out"}

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @classmethod
    def from_file(cls, path):
        """Flat key=value text config; '#' starts a comment."""
        values = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, val = (part.strip() for part in line.split("=", 1))
            if key not in cls.__dataclass_fields__:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = val
        return cls(**_coerce_fields(values))


def _coerce_fields(values):
    out = {}
    for key, val in values.items():
        field = RunConfig.__dataclass_fields__[key]
        if isinstance(val, str):
            typ = field.type
            if "int" in typ:
                val = int(val)
            elif "float" in typ:
                val = float(val)
        out[key] = val
    return out


@dataclass
class RunReport:
    """Config echo, solver statistics and derived metrics for one run."""

    config: dict
    status: str
    x: np.ndarray
    f: float
    h: float
    stationarity: float
    stop_threshold: float
    outer_iters: int
    neval_f: int
    neval_grad: int
    neval_prox: int
    elapsed: float
    history: list
    metrics: dict
    trace: list

    @property
    def objective_value(self):
        return self.f + self.h

    def to_dict(self):
        """Deterministic JSON payload; timing and trace are excluded."""
        return {
            "config": self.config,
            "status": self.status,
            "x": [float(v) for v in self.x],
            "f": _jsonable(self.f),
            "h": _jsonable(self.h),
            "f_plus_h": _jsonable(self.f + self.h),
            "stationarity": _jsonable(self.stationarity),
            "stop_threshold": _jsonable(self.stop_threshold),
            "counts": {
                "outer": self.outer_iters,
                "f": self.neval_f,
                "grad": self.neval_grad,
                "prox": self.neval_prox,
            },
            "metrics": {k: _jsonable(v) for k, v in sorted(self.metrics.items())},
            "history": [[int(i), _jsonable(fv), _jsonable(hv)]
                        for i, fv, hv in self.history],
        }

    @classmethod
    def from_dict(cls, payload):
        hist = [(i, _unjsonable(fv), _unjsonable(hv))
                for i, fv, hv in payload["history"]]
        return cls(
            config=payload["config"],
            status=payload["status"],
            x=np.asarray(payload["x"], dtype=float),
            f=_unjsonable(payload["f"]),
            h=_unjsonable(payload["h"]),
            stationarity=_unjsonable(payload["stationarity"]),
            stop_threshold=_unjsonable(payload.get("stop_threshold")),
            outer_iters=payload["counts"]["outer"],
            neval_f=payload["counts"]["f"],
            neval_grad=payload["counts"]["grad"],
            neval_prox=payload["counts"]["prox"],
            elapsed=0.0,
            history=hist,
            metrics=payload["metrics"],
            trace=[],
        )


def _jsonable(v):
    v = float(v)
    return v if np.isfinite(v) else None


def _unjsonable(v):
    return float("inf") if v is None else float(v)


def build_problem(cfg: RunConfig):
    """Instantiate (problem, regularizer, instance, x0) from a resolved config."""
    if cfg.problem == "group_lasso":
        kwargs = dict(lam=cfg.lam)
        if cfg.m is not None:
            kwargs["m"] = cfg.m
        if cfg.n is not None:
            kwargs["n"] = cfg.n
        if cfg.groups is not None:
            kwargs["g_total"] = cfg.groups
        if cfg.active is not None:
            kwargs["g_active"] = cfg.active
        if cfg.noise is not None:
            kwargs["noise_std"] = cfg.noise
        try:
            problem, reg, inst = make_group_lasso(cfg.seed, **kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return problem, reg, inst, np.zeros(problem.n)
    if cfg.problem == "svm":
        if cfg.mnist_dir:
            tri, trl = find_mnist_files(cfg.mnist_dir, "train")
            tei, tel = find_mnist_files(cfg.mnist_dir, "test")
            A, b = load_mnist_idx(tri, trl)
            At, bt = load_mnist_idx(tei, tel)
        else:
            kwargs = {}
            if cfg.features is not None:
                kwargs["n_features"] = cfg.features
            if cfg.train_size is not None:
                kwargs["n_train"] = cfg.train_size
            if cfg.test_size is not None:
                kwargs["n_test"] = cfg.test_size
            A, b, At, bt = synthetic_svm_data(cfg.seed, **kwargs)
        problem, reg, inst = make_svm(A, b, lam=cfg.lam, test_features=At,
                                      test_labels=bt, seed=cfg.seed)
        return problem, reg, inst, np.ones(problem.n)
    # fh
    kwargs = dict(lam=cfg.lam)
    if cfg.samples is not None:
        kwargs["n"] = cfg.samples
    if cfg.substeps is not None:
        kwargs["substeps"] = cfg.substeps
    problem, reg, inst = make_fh(**kwargs)
    return problem, reg, inst, np.full(problem.n, 0.5)


def _solver_options(cfg: RunConfig):
    return SolverOptions(atol=cfg.atol, rtol=cfg.rtol,
                         max_outer=cfg.max_outer, max_inner=cfg.max_inner)


def _metrics(cfg, inst, stats):
    metrics = {}
    if cfg.problem in ("group_lasso", "fh"):
        metrics["dist_to_truth"] = float(np.linalg.norm(stats.x - inst.x_true))
    if cfg.problem == "svm":
        metrics["train_accuracy"] = svm_accuracy(inst.A, inst.b, stats.x)
        if inst.A_test is not None:
            metrics["test_accuracy"] = svm_accuracy(inst.A_test, inst.b_test, stats.x)
        metrics["zero_fraction"] = float(np.mean(stats.x == 0.0))
    return metrics


def run(cfg: RunConfig):
    """Execute one configured run; write outputs when cfg.out is set."""
    cfg = cfg.validate().resolved()
    problem, reg, inst, x0 = build_problem(cfg)
    solver = SOLVERS[cfg.solver]
    opts = _solver_options(cfg)

    def logger(k, f, h, xi, param, inner):
        log.debug("%s/%s k=%d f=%.6g h=%.6g xi=%.3e param=%.3e inner=%d",
                  cfg.problem, cfg.solver, k, f, h, xi, param, inner)

    stats = solver(problem, reg, x0, opts, callback=logger)
    # counter consistency with the problem/regularizer instances
    assert stats.neval_f == problem.neval_f
    assert stats.neval_prox == reg.nprox
    report = RunReport(
        config=cfg.to_dict(), status=stats.status, x=stats.x,
        f=stats.f, h=stats.h, stationarity=stats.stationarity,
        stop_threshold=stats.stop_threshold,
        outer_iters=stats.outer_iters, neval_f=stats.neval_f,
        neval_grad=stats.neval_grad, neval_prox=stats.neval_prox,
        elapsed=stats.elapsed, history=stats.history,
        metrics=_metrics(cfg, inst, stats), trace=stats.trace,
    )
    if cfg.out:
        write_outputs(report, Path(cfg.out), instance=inst)
    return report


def write_outputs(report: RunReport, out_dir: Path, instance=None):
    """report.json + history files + figures under out_dir."""
    from . import figures

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    (out_dir / "timing.txt").write_text(f"elapsed_seconds = {report.elapsed:.6f}\n")
    emit_history(report, out_dir)
    figures.save_history_figure(report.history, out_dir / "history.png",
                                title=_run_label(report))
    if instance is not None:
        figures.save_solution_figure(report, instance, out_dir / "solution.png")
    log.info("wrote %s", out_dir / "report.json")


def _run_label(report):
    return f"{report.config.get('problem', '?')} / {report.config.get('solver', '?')}"


def emit_history(report: RunReport, out_dir=None):
    """Convergence history as CSV text: evaluation index, f+h and the
    monotone envelope (best value so far).  Writes history.csv when a
    directory is given; returns the CSV text."""
    if not report.history:
        raise ValueError("empty history")
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["eval", "f_plus_h", "best"])
    best = float("inf")
    for idx, f, h in report.history:
        total = f + h
        best = min(best, total)
        writer.writerow([idx, repr(total), repr(best)])
    text = buf.getvalue()
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "history.csv").write_text(text)
    return text


_TABLE_NUMERIC = ("f", "h", "f_plus_h")


def _table_rows(reports):
    rows = []
    for rep in reports:
        row = {
            "alg": rep.config.get("solver", "?"),
            "f": rep.f,
            "h": rep.h,
            "f_plus_h": rep.f + rep.h,
            "dist": rep.metrics.get("dist_to_truth"),
            "train_acc": rep.metrics.get("train_accuracy"),
            "test_acc": rep.metrics.get("test_accuracy"),
            "n_f": rep.neval_f,
            "n_grad": rep.neval_grad,
            "n_prox": rep.neval_prox,
            "time_s": rep.elapsed,
        }
        rows.append(row)
    return rows


def emit_table(reports, out_dir=None):
    """Aligned-text summary table (one row per report, input order); also
    writes table.txt and table.csv when a directory is given."""
    if not reports:
        raise ValueError("no reports to tabulate")
    rows = _table_rows(reports)
    with_dist = any(r["dist"] is not None for r in rows)
    with_acc = any(r["train_acc"] is not None for r in rows)

    headers = ["Alg", "f", "h", "f+h"]
    if with_dist:
        headers.append("dist")
    if with_acc:
        headers.append("(Train, Test)")
    headers += ["#f", "#grad", "#prox", "t(s)"]

    def fmt(row):
        cells = [row["alg"], f"{row['f']:.2f}", f"{row['h']:.2f}",
                 f"{row['f_plus_h']:.2f}"]
        if with_dist:
            cells.append("" if row["dist"] is None else f"{row['dist']:.2f}")
        if with_acc:
            if row["train_acc"] is None:
                cells.append("")
            else:
                test = "-" if row["test_acc"] is None else f"{row['test_acc']:.2f}"
                cells.append(f"({row['train_acc']:.2f}, {test})")
        cells += [str(row["n_f"]), str(row["n_grad"]), str(row["n_prox"]),
                  f"{row['time_s']:.2f}"]
        return cells

    table = [headers] + [fmt(r) for r in rows]
    widths = [max(len(line[i]) for line in table) for i in range(len(headers))]
    text = "\n".join("  ".join(cell.rjust(w) for cell, w in zip(line, widths))
                     for line in table) + "\n"

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "table.txt").write_text(text)
        with (out_dir / "table.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["alg", "f", "h", "f_plus_h", "dist", "train_acc",
                             "test_acc", "n_f", "n_grad", "n_prox", "time_s"])
            for row in rows:
                writer.writerow([
                    row["alg"], repr(row["f"]), repr(row["h"]),
                    repr(row["f_plus_h"]),
                    "" if row["dist"] is None else repr(row["dist"]),
                    "" if row["train_acc"] is None else repr(row["train_acc"]),
                    "" if row["test_acc"] is None else repr(row["test_acc"]),
                    row["n_f"], row["n_grad"], row["n_prox"],
                    f"{row['time_s']:.6f}",
                ])
    return text


def _run_to_dir(cfg: RunConfig):
    report = run(cfg)
    return report


def sweep(configs, out_dir, jobs=1):
    """Run several configs (each into its own subdirectory) and emit a
    combined table.  Returns the list of reports in input order."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prepared = []
    for cfg in configs:
        cfg = cfg.validate().resolved()
        sub = out_dir / f"{cfg.problem}_{cfg.solver}_{cfg.digest()}"
        prepared.append(replace(cfg, out=str(sub)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_to_dir, prepared))
    else:
        reports = [_run_to_dir(cfg) for cfg in prepared]
    emit_table(reports, out_dir)
    return reports
