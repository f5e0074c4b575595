"""Synchronous distributed SGD over a realized batch stream.

Each iteration every worker sums the per-sample gradients of its batch at
the shared iterate; the master adds the M worker sums in worker order and
takes the step ``w <- w - lr * sum / (M b)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NumericAbort
from .objectives import Dataset, ObjectiveSpec, full_objective, loss_and_grad_batch
from .schedule import BatchStream

STRONGLY_CONVEX = "strongly-convex"
CONVEX = "convex"
NON_CONVEX = "non-convex"
CONSTANT = "constant"
SCHEDULES = (STRONGLY_CONVEX, CONVEX, NON_CONVEX, CONSTANT)

CSV_HEADER = ("epoch", "iter", "effective_passes", "f_gap", "dist_sq", "grad_norm_sq", "lr")


@dataclass(frozen=True)
class LrSchedule:
    """Learning-rate rule.

    ``strongly-convex``: constant / (mu ((s-1)T + t + offset)), constant = 2
    by default. ``convex``: sqrt(L / ((s-1)T + t)). ``non-convex``: the
    fixed step min{ sqrt(2 gap / (S T (3 rho B^2/(bM)) (1 + 584 log T / T))),
    1/(6 rho) }. ``constant``: ``eta``.
    """

    kind: str
    mu: Optional[float] = None
    L: Optional[float] = None
    rho: Optional[float] = None
    B_sq: Optional[float] = None
    b: Optional[int] = None
    M: Optional[int] = None
    S: Optional[int] = None
    initial_gap: Optional[float] = None
    eta: Optional[float] = None
    constant: float = 2.0
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.kind!r}; expected one of {SCHEDULES}")
        required = {STRONGLY_CONVEX: ("mu",), CONVEX: ("L",), CONSTANT: ("eta",),
                    NON_CONVEX: ("rho", "B_sq", "b", "M", "S", "initial_gap")}[self.kind]
        for name in required:
            value = getattr(self, name)
            if value is None or not value > 0:
                raise ValueError(f"{self.kind} schedule needs a positive {name}, got {value}")
        if self.constant <= 0 or self.offset < 0:
            raise ValueError("constant must be positive and offset non-negative")


def nonconvex_step(schedule: LrSchedule, T: int) -> float:
    sc = schedule
    noise = 3.0 * sc.rho * sc.B_sq / (sc.b * sc.M) * (1.0 + 584.0 * math.log(T) / T)
    eta = math.sqrt(2.0 * sc.initial_gap / noise) / math.sqrt(sc.S * T)
    return min(eta, 1.0 / (6.0 * sc.rho))


def lr_at(schedule: LrSchedule, s: int, t: int, T: int) -> float:
    """Learning rate at iteration t (1..T) of epoch s (1-based)."""
    if s < 1 or not 1 <= t <= T:
        raise ValueError(f"invalid (s, t) = ({s}, {t}) for T={T}")
    k = (s - 1) * T + t
    if schedule.kind == STRONGLY_CONVEX:
        return schedule.constant / (schedule.mu * (k + schedule.offset))
    if schedule.kind == CONVEX:
        return math.sqrt(schedule.L / k)
    if schedule.kind == NON_CONVEX:
        return nonconvex_step(schedule, T)
    return schedule.eta


@dataclass
class TrainState:
    w: np.ndarray
    w_sum: np.ndarray
    count: int = 0
    s: int = 1
    t: int = 0

    @classmethod
    def start(cls, w0) -> "TrainState":
        w0 = np.array(w0, dtype=float)
        return cls(w=w0, w_sum=np.zeros_like(w0))

    @property
    def w_bar(self) -> np.ndarray:
        if self.count == 0:
            return self.w.copy()
        return self.w_sum / self.count


def step(state: TrainState, batches, objective: ObjectiveSpec, data: Dataset, eta: float,
         T: Optional[int] = None) -> TrainState:
    """One synchronous update. ``batches`` is a sequence of M index arrays.

    The returned state's iteration counter is advanced; when ``T`` is given
    the counter wraps to the next epoch after T iterations.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    sizes = {len(batch) for batch in batches}
    if len(sizes) != 1:
        raise ValueError(f"workers received batches of different sizes {sorted(sizes)}")
    b = sizes.pop()
    total = np.zeros_like(state.w)
    for m, batch in enumerate(batches):
        g = loss_and_grad_batch(objective, data, state.w, batch).gradient
        if not np.all(np.isfinite(g)):
            where = (state.s, state.t + 1, m + 1)
            raise NumericAbort(f"non-finite gradient at (s, t, m) = {where}", location=where)
        total = total + g
    w = state.w - eta * total / (len(batches) * b)
    s, t = state.s, state.t + 1
    if T is not None and t > T:
        s, t = s + 1, 1
    return TrainState(w=w, w_sum=state.w_sum + w, count=state.count + 1, s=s, t=t)


@dataclass
class MetricsTrace:
    """Per-iteration records plus a summary of the final and averaged iterates.

    ``f_gap`` and ``dist_sq`` are NaN when no reference optimum was given.
    """

    epoch: np.ndarray
    iteration: np.ndarray
    effective_passes: np.ndarray
    f_gap: np.ndarray
    dist_sq: np.ndarray
    grad_norm_sq: np.ndarray
    lr: np.ndarray
    loss: np.ndarray
    T: int = 0
    summary: dict = field(default_factory=dict)
    iterates: Optional[np.ndarray] = None
    final_w: Optional[np.ndarray] = None
    w_bar: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.epoch)

    @classmethod
    def from_records(cls, records, T=0, **extra) -> "MetricsTrace":
        cols = list(zip(*records)) if records else [[]] * 8
        arrays = [np.asarray(c, dtype=float) for c in cols]
        arrays[0] = arrays[0].astype(int)
        arrays[1] = arrays[1].astype(int)
        return cls(*arrays, T=T, **extra)

    def metric(self, name: str) -> np.ndarray:
        if name == "grad_norm_sq_running_mean":
            return running_mean(self.grad_norm_sq)
        return getattr(self, name)

    def epoch_end(self, name: str) -> np.ndarray:
        """Metric value at the last iteration of every epoch."""
        values = self.metric(name)
        ends = np.flatnonzero(np.diff(np.append(self.epoch, self.epoch[-1] + 1)) != 0)
        return values[ends]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in zip(self.epoch, self.iteration, self.effective_passes, self.f_gap,
                       self.dist_sq, self.grad_norm_sq, self.lr):
            writer.writerow([int(row[0]), int(row[1])] + [_fmt(v) for v in row[2:]])
        return buf.getvalue()


def _fmt(value) -> str:
    return "" if math.isnan(value) else repr(float(value))


def running_mean(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return np.cumsum(values) / np.arange(1, values.size + 1)


def run(stream: BatchStream, objective: ObjectiveSpec, data: Dataset, schedule: LrSchedule,
        w0, reference=None, store_iterates: bool = False) -> MetricsTrace:
    """Run S epochs of T synchronous iterations; metrics use exact F and grad F.

    ``reference`` is ``(w_star, F_star)``; either entry may be None (an MLP
    run can pass a lower bound for F with no w*).
    """
    spec = stream.spec
    if data.n != spec.n:
        raise ValueError(f"stream is for n={spec.n} but data has n={data.n}")
    w_star, f_star = reference if reference is not None else (None, None)
    if w_star is not None:
        w_star = np.asarray(w_star, dtype=float)
    T, M, b, n = spec.T, spec.M, spec.b, spec.n
    state = TrainState.start(w0)
    records = []
    iterates = [] if store_iterates else None

    def trace_so_far():
        return MetricsTrace.from_records(records, T=T)

    for s in range(1, spec.S + 1):
        for t in range(1, T + 1):
            eta = lr_at(schedule, s, t, T)
            try:
                state = step(state, stream.batches[s - 1, t - 1], objective, data, eta)
            except NumericAbort as exc:
                raise NumericAbort(str(exc), trace=trace_so_far(), location=exc.location) from None
            report = full_objective(objective, data, state.w)
            if not (math.isfinite(report.value) and np.all(np.isfinite(state.w))):
                raise NumericAbort(f"non-finite objective at (s, t) = ({s}, {t})",
                                   trace=trace_so_far(), location=(s, t))
            g = report.gradient
            passes = ((s - 1) * T + t) * b * M / n
            gap = report.value - f_star if f_star is not None else math.nan
            dist = float(np.sum((state.w - w_star) ** 2)) if w_star is not None else math.nan
            records.append((s, t, passes, gap, dist, float(g @ g), eta, report.value))
            if iterates is not None:
                iterates.append(state.w.copy())

    trace = MetricsTrace.from_records(records, T=T)
    trace.final_w = state.w
    trace.w_bar = state.w_bar
    bar = full_objective(objective, data, trace.w_bar)
    trace.summary = {
        "iterations": state.count,
        "final": {"loss": float(trace.loss[-1]), "f_gap": _opt(trace.f_gap[-1]),
                  "dist_sq": _opt(trace.dist_sq[-1]), "grad_norm_sq": float(trace.grad_norm_sq[-1])},
        "w_bar": {"loss": bar.value,
                  "f_gap": bar.value - f_star if f_star is not None else None,
                  "dist_sq": float(np.sum((trace.w_bar - w_star) ** 2)) if w_star is not None else None,
                  "grad_norm_sq": float(bar.gradient @ bar.gradient)},
    }
    if iterates is not None:
        trace.iterates = np.array(iterates)
    return trace


def _opt(value):
    return None if math.isnan(value) else float(value)
