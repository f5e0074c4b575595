"""Self-contained verification battery.

Six groups of checks, each yielding :class:`CheckRecord` lines:

1. conditional batch-tuple law of sufficient shuffling is uniform over the
   unseen tuples (exhaustive)
2. conditional-gap bound for an insufficient riffle (exhaustive)
3. batch-mean expectation identity (Monte Carlo)
4. exact vs empirical shuffling error
5. per-sample gradients vs central finite differences
6. (M, b) vs (1, Mb) trajectory equivalence

Everything is generated in-process; no files or network are needed.
"""

from __future__ import annotations

import math
import time
from typing import Callable, Iterable, Optional

import numpy as np

from .. import analysis, engine, objectives
from ..analysis import CheckRecord
from ..datasets import gaussian_blobs, quadratic_centers, synthetic_logistic
from ..rng import RandomnessSource
from ..schedule import BatchStream, StreamSpec, build_stream
from ..shuffling import FISHER_YATES, IDENTITY, RIFFLE, TOP_TO_RANDOM, ShufflerSpec

GROUPS = ("equivalence", "gap", "identity", "tv", "gradient", "aggregation")


def check_equivalence(seed: int = 0, inject_biased: bool = False) -> Iterable[CheckRecord]:
    """Fisher-Yates at n in {4, 6}; with ``inject_biased`` the identity
    shuffler is passed off as Fisher-Yates and must fail."""
    spec = ShufflerSpec(IDENTITY) if inject_biased else ShufflerSpec(FISHER_YATES)
    for n in (4, 6):
        for M, b in ((1, 1), (2, 1), (1, 2)):
            record = analysis.check_without_replacement_equivalence(spec, n, M, b)
            if inject_biased:
                record.parameters["shuffler"] = "fisher-yates (injected: identity)"
            yield record


def check_gap(seed: int = 0, n: int = 4, M: int = 1, b: int = 1) -> Iterable[CheckRecord]:
    """Smallest riffle h whose exact error is within bM/n, every t with t+1 < T."""
    threshold = b * M / n
    h = next(h for h in range(64)
             if analysis.tv_exact(ShufflerSpec(RIFFLE, h), n).epsilon <= threshold)
    spec = ShufflerSpec(RIFFLE, h)
    T = n // (M * b)
    for t in range(T - 1):
        rep = analysis.check_conditional_gap(spec, n, M, b, t)
        yield CheckRecord("conditional gap bound",
                          {"shuffler": spec.label(), "n": n, "M": M, "b": b, "t": t},
                          observed=rep.max_gap, expected=rep.bound, passed=bool(rep.passed),
                          detail=f"eps={rep.epsilon:.6g} <= bM/n={threshold:.6g}; "
                                 f"{rep.keys_checked} conditioning events")


def check_identity(seed: int = 0, n: int = 6, sequences: int = 20,
                   trials: int = 100_000) -> Iterable[CheckRecord]:
    """Every valid (t, b) for ``sequences`` random value vectors; one summary line."""
    rng = RandomnessSource(seed, 31)
    worst_z = 0.0
    failures = []
    checked = 0
    for k in range(sequences):
        values = rng.normal(size=n) * rng.random() * 10
        perms = rng.generator.permuted(np.tile(np.arange(n), (trials, 1)), axis=1)
        for b in range(1, n + 1):
            for t in range(0, (n - b) // b + 1):
                rep = analysis.verify_batch_mean_identity(n, b, t, values, trials, permutations=perms)
                checked += 1
                worst_z = max(worst_z, rep.z_score)
                if not rep.agree:
                    failures.append((k, b, t))
    yield CheckRecord("batch-mean identity", {"n": n, "sequences": sequences, "trials": trials},
                      observed=worst_z, expected=4.0, passed=not failures,
                      detail=f"max paired z-score over {checked} (sequence, b, t) cases"
                             + (f"; failing {failures[:5]}" if failures else ""))


def check_tv(seed: int = 0, trials: int = 1_000_000, tolerance: float = 0.005) -> Iterable[CheckRecord]:
    for n in (3, 4, 5):
        eps = analysis.tv_exact(ShufflerSpec(FISHER_YATES), n).epsilon
        yield CheckRecord("fisher-yates exact error", {"n": n}, observed=eps, expected=0.0,
                          passed=abs(eps) <= 1e-12)
    for alg in (RIFFLE, TOP_TO_RANDOM):
        for n in (3, 4):
            for h in (1, 2, 4):
                spec = ShufflerSpec(alg, h)
                exact = analysis.tv_exact(spec, n).epsilon
                emp = analysis.tv_empirical(spec, n, trials, RandomnessSource(seed, 41, n, h))
                diff = abs(exact - emp.epsilon)
                yield CheckRecord("exact vs empirical error",
                                  {"shuffler": spec.label(), "n": n, "trials": trials},
                                  observed=diff, expected=tolerance, passed=diff <= tolerance,
                                  detail=f"exact={exact:.6f} empirical={emp.epsilon:.6f}")


def _small_problems(seed: int):
    quad = objectives.quadratic(objectives.quadratic_spectrum(1.0, 10.0, 5))
    logi = objectives.logistic(6, 0.1)
    net = objectives.mlp(4, (6, 5), 3, lam=0.01)
    return [(quad, quadratic_centers(200, 5, seed)),
            (logi, synthetic_logistic(200, 6, seed)),
            (net, gaussian_blobs(200, 4, 3, seed))]


def finite_difference_gradient(f: Callable[[np.ndarray], float], w: np.ndarray,
                               step: float = 1e-6) -> np.ndarray:
    grad = np.empty_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = step
        grad[j] = (f(w + e) - f(w - e)) / (2 * step)
    return grad


def gradient_relative_error(spec, data, w, i, step: float = 1e-6) -> float:
    rep = objectives.loss_and_grad_single(spec, data, w, i)
    fd = finite_difference_gradient(
        lambda v: objectives.loss_and_grad_single(spec, data, v, i).value, w, step)
    scale = max(np.linalg.norm(rep.gradient), np.linalg.norm(fd), 1e-8)
    return float(np.linalg.norm(rep.gradient - fd) / scale)


def check_gradients(seed: int = 0, points: int = 100, tolerance: float = 1e-4) -> Iterable[CheckRecord]:
    rng = RandomnessSource(seed, 51)
    for spec, data in _small_problems(seed):
        worst = 0.0
        for _ in range(points):
            w = rng.normal(0.0, 0.5, spec.dim)
            i = int(rng.integers(0, data.n))
            worst = max(worst, gradient_relative_error(spec, data, w, i))
        yield CheckRecord("gradient finite differences", {"family": spec.family, "points": points},
                          observed=worst, expected=tolerance, passed=worst <= tolerance,
                          detail="max relative error, central differences with step 1e-6")


def merge_workers(stream: BatchStream) -> BatchStream:
    """The same index stream seen by a single worker with batch M*b."""
    spec = stream.spec
    S, T, M, b = stream.batches.shape
    merged = StreamSpec(spec.regime, spec.n, 1, M * b, spec.S, spec.shuffler, spec.seed)
    return BatchStream(merged, stream.batches.reshape(S, T, 1, M * b).copy(), stream.permutations)


def check_aggregation(seed: int = 0, iterations: int = 100, tolerance: float = 1e-12) -> Iterable[CheckRecord]:
    M, b, n = 2, 5, 200
    T = n // (M * b)
    S = math.ceil(iterations / T)
    schedule = engine.LrSchedule(engine.CONSTANT, eta=0.05)
    for spec, data in _small_problems(seed):
        stream = build_stream(StreamSpec("global", n, M, b, S, seed=seed))
        w0 = objectives.default_w0(spec, seed)
        a = engine.run(stream, spec, data, schedule, w0, store_iterates=True)
        c = engine.run(merge_workers(stream), spec, data, schedule, w0, store_iterates=True)
        diff = float(np.max(np.abs(a.iterates - c.iterates)))
        yield CheckRecord("aggregation equivalence",
                          {"family": spec.family, "M": M, "b": b, "iterations": len(a)},
                          observed=diff, expected=tolerance, passed=diff <= tolerance,
                          detail="max |w(M,b) - w(1,Mb)| over all coordinates and iterations")


_CHECKS = {"equivalence": check_equivalence, "gap": check_gap, "identity": check_identity,
           "tv": check_tv, "gradient": check_gradients, "aggregation": check_aggregation}


def run_battery(seed: int = 0, inject_biased: bool = False, groups: Optional[Iterable[str]] = None,
                emit: Optional[Callable[[str], None]] = None) -> list:
    """Run the selected check groups; returns ``(group, record)`` pairs.

    ``emit`` receives each record's text line as soon as it is available.
    """
    records = []
    for name in groups or GROUPS:
        if name not in _CHECKS:
            raise ValueError(f"unknown check group {name!r}; expected one of {GROUPS}")
        started = time.perf_counter()
        kwargs = {"inject_biased": inject_biased} if name == "equivalence" else {}
        for record in _CHECKS[name](seed=seed, **kwargs):
            records.append((name, record))
            if emit:
                emit(record.line())
        if emit:
            emit(f"  ({name}: {time.perf_counter() - started:.1f}s)")
    return records
