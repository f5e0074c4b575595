"""Single runs and sweeps driven by an :class:`ExperimentConfig`."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .. import analysis, engine, objectives
from ..datasets import make_dataset
from ..errors import NoReferenceOptimum, NumericAbort
from ..objectives import Dataset, ObjectiveSpec
from ..schedule import StreamSpec, build_stream
from ..shuffling import ShufflerSpec
from .config import ExperimentConfig, with_cell
from .outputs import plot_data, resolve_output_dir, svg_line_chart, write_atomic, write_json


@dataclass(frozen=True, eq=False)
class Setup:
    """Everything a cell needs that does not depend on the stream."""

    objective: ObjectiveSpec
    data: Dataset
    w_star: Optional[np.ndarray]
    f_star: float
    reference_kind: str  # "certified-optimum" or "lower-bound"
    w0: np.ndarray


def build_objective(config: ExperimentConfig, n: int, d: int) -> ObjectiveSpec:
    oc = config.objective
    if oc.family == objectives.QUADRATIC:
        return objectives.quadratic(objectives.quadratic_spectrum(oc.mu, oc.kappa, d))
    if oc.family == objectives.LOGISTIC:
        lam = oc.lam if oc.lam is not None else 1.0 / math.sqrt(n)
        return objectives.logistic(d, lam)
    return objectives.mlp(d, oc.hidden, oc.classes, oc.lam or 0.0)


def prepare(config: ExperimentConfig) -> Setup:
    dc = config.data
    data = make_dataset(dc.generator, dc.n, dc.d, dc.seed, **dc.options)
    spec = build_objective(config, dc.n, dc.d)
    ec = config.estimation
    spec = objectives.estimate_constants(spec, data, ec.sample_count, ec.radius, rng=ec.seed)
    try:
        w_star, f_star = objectives.solve_reference_optimum(spec, data)
        kind = "certified-optimum"
    except NoReferenceOptimum:
        w_star, f_star, kind = None, config.f_lower_bound, "lower-bound"
    if config.w0 is None:
        w0 = objectives.default_w0(spec, dc.seed)
    else:
        w0 = np.full(spec.dim, float(config.w0))
    return Setup(spec, data, w_star, float(f_star), kind, w0)


def build_schedule(config: ExperimentConfig, setup: Setup, M: int, S: int,
                   base_M: Optional[int] = None) -> engine.LrSchedule:
    """Learning-rate rule for one cell.

    Constants come from the estimated objective spec unless overridden. With
    ``lr_scaling = "linear"`` the step computed at ``base_M`` workers is
    multiplied by ``M / base_M``.
    """
    sc = config.schedule
    spec = setup.objective
    over = dict(sc.overrides)
    b, n = config.stream.b, config.data.n
    common = {k: over[k] for k in ("constant", "offset") if k in over}
    if sc.kind == engine.STRONGLY_CONVEX:
        schedule = engine.LrSchedule(sc.kind, mu=over.get("mu", spec.mu), **common)
    elif sc.kind == engine.CONVEX:
        schedule = engine.LrSchedule(sc.kind, L=over.get("L", spec.L), **common)
    elif sc.kind == engine.CONSTANT:
        schedule = engine.LrSchedule(sc.kind, eta=over.get("eta"))
    else:
        gap = over.get("initial_gap")
        if gap is None:
            gap = objectives.full_objective(spec, setup.data, setup.w0).value - setup.f_star
        schedule = engine.LrSchedule(sc.kind, rho=over.get("rho", spec.rho),
                                     B_sq=over.get("B_sq", spec.B_sq), b=b, M=M, S=S,
                                     initial_gap=gap, **common)
    if config.lr_scaling == "linear" and base_M is not None and M != base_M:
        if schedule.kind == engine.NON_CONVEX:
            base = dataclasses.replace(schedule, M=base_M)
            eta = engine.nonconvex_step(base, n // (base_M * b))
        else:
            eta = schedule.eta
        schedule = engine.LrSchedule(engine.CONSTANT, eta=eta * M / base_M)
    return schedule


def cell_label(cell: dict) -> str:
    return f"{cell['regime']}-M{cell['M']}-S{cell['S']}-h{cell['rounds']}-r{cell['seed']}"


@dataclass
class RunResult:
    config: ExperimentConfig
    cell: dict
    status: str  # "ok" or "numeric-abort"
    trace: Optional[engine.MetricsTrace]
    summary: dict = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def label(self) -> str:
        return cell_label(self.cell)


def _rate_metric(family: str) -> str:
    return "grad_norm_sq_running_mean" if family == objectives.MLP else "dist_sq"


def run_experiment(config: ExperimentConfig, setup: Optional[Setup] = None,
                   base_M: Optional[int] = None) -> RunResult:
    setup = setup or prepare(config)
    st = config.stream
    cell = {"M": st.M, "S": st.S, "regime": st.regime, "rounds": st.rounds, "seed": st.seed}
    shuffler = ShufflerSpec(st.algorithm, st.rounds)
    stream = build_stream(StreamSpec(st.regime, config.data.n, st.M, st.b, st.S, shuffler, st.seed))
    schedule = build_schedule(config, setup, st.M, st.S, base_M)
    reference = (setup.w_star, setup.f_star)
    try:
        trace = engine.run(stream, setup.objective, setup.data, schedule, setup.w0, reference)
    except NumericAbort as exc:
        result = RunResult(config, cell, "numeric-abort", exc.trace, error=str(exc))
        result.summary = _summary(result, setup, stream, schedule)
        return result
    result = RunResult(config, cell, "ok", trace)
    result.summary = _summary(result, setup, stream, schedule)
    return result


def _summary(result: RunResult, setup: Setup, stream, schedule) -> dict:
    spec = setup.objective
    trace = result.trace
    target = result.config.target
    out = {
        "name": result.config.name,
        "status": result.status,
        "cell": result.cell,
        "config": result.config.to_dict(),
        "objective": {"family": spec.family, "dim": spec.dim, "mu": spec.mu, "rho": spec.rho,
                      "kappa": spec.kappa, "L": spec.L, "B_sq": spec.B_sq, "G_sq": spec.G_sq,
                      "lam": spec.lam, "estimation": dict(spec.estimation)},
        "reference": {"kind": setup.reference_kind, "F_star": setup.f_star},
        "stream": {"regime": stream.spec.regime, "n": stream.spec.n, "M": stream.spec.M,
                   "b": stream.spec.b, "S": stream.spec.S, "T": stream.spec.T,
                   "shuffler": stream.spec.shuffler.label(), "seed": stream.spec.seed},
        "schedule": {k: v for k, v in dataclasses.asdict(schedule).items() if v is not None},
        "error": result.error,
    }
    if trace is None or len(trace) == 0:
        return out
    out["iterations"] = len(trace)
    out["schedule"]["first_lr"] = float(trace.lr[0])
    out["schedule"]["last_lr"] = float(trace.lr[-1])
    if result.status == "ok":
        out["final"] = trace.summary["final"]
        out["w_bar"] = trace.summary["w_bar"]
    reached = None
    if target.value is not None:
        reached = analysis.epochs_to_target(trace, target.metric, target.value)
    out["target"] = {"metric": target.metric, "value": target.value,
                     "epochs_to_target": reached, "reached": reached is not None}
    metric = _rate_metric(spec.family)
    try:
        slope = analysis.rate_exponent(trace, metric, (0.5, 1.0))
        out["rate"] = {"metric": metric, "window": "second half", "slope": slope.slope,
                       "points": slope.points, "excluded": slope.excluded}
    except ValueError as exc:
        out["rate"] = {"metric": metric, "window": "second half", "slope": None, "note": str(exc)}
    return out


def plot_metric(config: ExperimentConfig) -> str:
    if config.target.value is not None:
        return config.target.metric
    return _rate_metric(config.objective.family)


def write_run_outputs(result: RunResult, directory) -> dict:
    """trace.csv, summary.json, plot.txt and plot.svg inside ``directory``."""
    directory = Path(directory)
    files = {"summary": write_json(directory / "summary.json", result.summary)}
    if result.trace is not None:
        metric = plot_metric(result.config)
        series = {result.label: (result.trace.effective_passes, result.trace.metric(metric))}
        files["trace"] = write_atomic(directory / "trace.csv", result.trace.to_csv())
        files["plot_data"] = write_atomic(directory / "plot.txt", plot_data(series, y_label=metric))
        files["svg"] = write_atomic(directory / "plot.svg",
                                    svg_line_chart(series, title=result.config.name, y_label=metric))
    return files


def run_output_dir(config: ExperimentConfig) -> Path:
    return resolve_output_dir(config.output_dir) / config.name


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepResult:
    config: ExperimentConfig
    results: dict  # label -> RunResult, in cell order
    speedup_rows: list
    regime_rows: list


def _run_cell(args):
    config, setup, base_M = args
    return run_experiment(config, setup, base_M)


def run_sweep(config: ExperimentConfig, setup: Optional[Setup] = None) -> SweepResult:
    """Run every cell of the sweep; a failing cell is recorded, not fatal.

    Each cell's stream seed is its replicate index, so a cell replays
    exactly as a single run with the same stream settings and adding cells
    never changes existing ones.
    """
    setup = setup or prepare(config)
    cells = config.cells()
    base_M = min(cell["M"] for cell in cells)
    jobs = [(with_cell(config, cell), setup, base_M) for cell in cells]
    if config.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.parallel) as pool:
            finished = list(pool.map(_run_cell, jobs))
    else:
        finished = [_run_cell(job) for job in jobs]
    results = {r.label: r for r in finished}
    return SweepResult(config, results, speedup_table(config, results), regime_table(config, results))


def speedup_table(config: ExperimentConfig, results: dict) -> list:
    """One row per (regime, S, rounds, seed, M); M/alpha against the smallest M."""
    target = config.target
    if target.value is None:
        return []
    groups: dict = {}
    for r in results.values():
        key = (r.cell["regime"], r.cell["S"], r.cell["rounds"], r.cell["seed"])
        if r.trace is not None and len(r.trace):
            groups.setdefault(key, {})[r.cell["M"]] = r.trace
    rows = []
    for (regime, S, rounds, seed), traces in groups.items():
        table = analysis.speedup(traces, target.value, target.metric, baseline=min(traces))
        for M, row in table.items():
            rows.append({"regime": regime, "S": S, "rounds": rounds, "seed": seed, "M": M,
                         "epochs_to_target": row.epochs, "alpha": row.alpha,
                         "speedup": row.speedup, "reached": row.reached})
    return rows


def regime_table(config: ExperimentConfig, results: dict) -> list:
    target = config.target
    rows = []
    for r in results.values():
        epochs = None
        if target.value is not None and r.trace is not None and len(r.trace):
            epochs = analysis.epochs_to_target(r.trace, target.metric, target.value)
        final = float(r.trace.metric(plot_metric(config))[-1]) if r.trace is not None and len(r.trace) else None
        rows.append({**r.cell, "status": r.status, "epochs_to_target": epochs,
                     "final_metric": final})
    return rows


def _csv(rows: list) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: "" if v is None else v for k, v in row.items()})
    return buf.getvalue()


def write_sweep_outputs(sweep: SweepResult, directory) -> dict:
    directory = Path(directory)
    for label, result in sweep.results.items():
        write_run_outputs(result, directory / "cells" / label)
    metric = plot_metric(sweep.config)
    series = {label: (r.trace.effective_passes, r.trace.metric(metric))
              for label, r in sweep.results.items() if r.trace is not None and len(r.trace)}
    files = {
        "speedup": write_atomic(directory / "speedup.csv", _csv(sweep.speedup_rows)),
        "regimes": write_atomic(directory / "regimes.csv", _csv(sweep.regime_rows)),
        "plot_data": write_atomic(directory / "plot.txt", plot_data(series, y_label=metric)),
        "svg": write_atomic(directory / "plot.svg",
                            svg_line_chart(series, title=sweep.config.name, y_label=metric)),
    }
    files["summary"] = write_json(directory / "sweep.json", {
        "name": sweep.config.name, "config": sweep.config.to_dict(),
        "cells": {label: {"status": r.status, "error": r.error, **r.cell}
                  for label, r in sweep.results.items()},
        "speedup": sweep.speedup_rows, "regimes": sweep.regime_rows})
    return files
