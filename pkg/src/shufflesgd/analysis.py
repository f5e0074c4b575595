"""Verification and measurement layer.

Exact and empirical shuffling error, conditional-gap checks, the
batch-mean expectation identity, order-of-magnitude rate predictions and the
trace measurements (epochs to target, speedup, log-log slopes) used to
compare runs against them.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import gammaln

from .engine import MetricsTrace
from .errors import BudgetExceeded
from .rng import as_source
from .schedule import conditional_table
from .shuffling import (DEFAULT_BUDGET, ShufflerSpec, all_permutations, enumerate_distribution,
                        sample_permutations)

# ---------------------------------------------------------------------------
# shuffling error


@dataclass
class ShufflingErrorReport:
    epsilon: float
    method: str
    n: int
    spec: ShufflerSpec
    trials: Optional[int] = None
    standard_error: Optional[float] = None
    note: str = ""

    def __post_init__(self):
        if not -1e-12 <= self.epsilon <= 1 + 1e-12:
            raise ValueError(f"epsilon {self.epsilon} outside [0, 1]")


def tv_from_distribution(dist: Mapping, n: int) -> float:
    """Total variation between ``dist`` and the uniform law on n! orders."""
    u = 1.0 / math.factorial(n)
    support = sum(abs(u - p) for p in dist.values())
    missing = math.factorial(n) - len(dist)
    return 0.5 * (support + missing * u)


def tv_exact(spec: ShufflerSpec, n: int, budget: int = DEFAULT_BUDGET) -> ShufflingErrorReport:
    dist = enumerate_distribution(spec, n, budget)
    return ShufflingErrorReport(tv_from_distribution(dist, n), "exact-enumeration", n, spec)


def _encode(perms: np.ndarray, n: int) -> np.ndarray:
    weights = n ** np.arange(n, dtype=np.int64)
    return perms.astype(np.int64) @ weights


def tv_empirical(spec: ShufflerSpec, n: int, trials: int, rng=None,
                 chunk: int = 200_000) -> ShufflingErrorReport:
    """Plug-in TV of the empirical permutation histogram.

    The plug-in estimator is biased upwards (roughly by
    sum_i sqrt(p_i / (2 pi trials)) when the true law is near uniform); the
    report says so instead of correcting it. The standard error is the
    delta-method value with the observed signs held fixed.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if n > 8:
        raise BudgetExceeded("empirical TV histograms are limited to n <= 8")
    rng = as_source(rng)
    counts: dict = {}
    done = 0
    while done < trials:
        k = min(chunk, trials - done)
        codes, c = np.unique(_encode(sample_permutations(spec, n, k, rng), n), return_counts=True)
        for code, cnt in zip(codes.tolist(), c.tolist()):
            counts[code] = counts.get(code, 0) + cnt
        done += k
    u = 1.0 / math.factorial(n)
    p_hat = np.array(list(counts.values()), dtype=float) / trials
    missing = math.factorial(n) - p_hat.size
    eps = 0.5 * (np.abs(p_hat - u).sum() + missing * u)
    signs = np.where(p_hat > u, 1.0, -1.0)
    var = 0.25 * (p_hat.sum() - (signs @ p_hat) ** 2) / trials
    return ShufflingErrorReport(float(eps), "empirical", n, spec, trials=trials,
                                standard_error=float(math.sqrt(max(var, 0.0))),
                                note="plug-in estimate; biased upward near uniformity")


def _log_eulerian_row(n: int) -> np.ndarray:
    """log A(n, r) for r = 1..n, A(n, r) = #permutations with r rising sequences."""
    row = np.array([0.0])
    for k in range(2, n + 1):
        r = np.arange(1, k + 1, dtype=float)
        stay = np.full(k, -np.inf)
        stay[:-1] = np.log(r[:-1]) + row
        grow = np.full(k, -np.inf)
        grow[1:] = np.log(k - r[1:] + 1) + row
        row = np.logaddexp(stay, grow)
    return row


def riffle_tv_rising_sequences(n: int, rounds: int) -> float:
    """Exact TV to uniform after ``rounds`` GSR riffles of n cards.

    A permutation with r rising sequences has probability
    C(2^h + n - r, n) / 2^(hn); summing |.| over the Eulerian classes gives
    the distance without enumerating n! orders, so it works for n in the
    thousands. Computed in log space.
    """
    if n < 1 or rounds < 0:
        raise ValueError("need n >= 1 and rounds >= 0")
    if n == 1:
        return 0.0
    log_a = _log_eulerian_row(n)
    log_nfact = gammaln(n + 1)
    two_h = 2.0 ** rounds
    total = 0.0
    j = np.arange(n, dtype=float)
    for r in range(1, n + 1):
        weight = math.exp(log_a[r - 1] - log_nfact)
        if r > two_h:
            total += weight
            continue
        # n! * P(class r) = prod_j (1 + (n - r - j) / 2^h)
        log_ratio = float(np.sum(np.log1p((n - r - j) / two_h)))
        # TV is the one-sided sum over classes the riffle under-weights
        if log_ratio < 0.0:
            total += weight * -math.expm1(log_ratio)
    return min(1.0, total)


def smallest_rounds_below(threshold: float, n: int, max_rounds: int = 64) -> tuple:
    """Smallest h with riffle TV <= threshold, and that TV."""
    for h in range(max_rounds + 1):
        eps = riffle_tv_rising_sequences(n, h)
        if eps <= threshold:
            return h, eps
    raise ValueError(f"no h <= {max_rounds} reaches TV <= {threshold}")


# ---------------------------------------------------------------------------
# conditional batch distributions


@dataclass
class CheckRecord:
    """One verification outcome; serializes to a JSON-friendly dict."""

    check: str
    parameters: dict
    observed: float
    expected: float
    passed: Optional[bool]
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def line(self) -> str:
        verdict = {True: "PASS", False: "FAIL", None: "N/A "}[self.passed]
        params = " ".join(f"{k}={v}" for k, v in self.parameters.items())
        text = f"[{verdict}] {self.check} ({params}): observed={self.observed:.3g} expected={self.expected:.3g}"
        return text + (f"  {self.detail}" if self.detail else "")


def uniform_distribution(n: int) -> dict:
    p = 1.0 / math.factorial(n)
    return {perm: p for perm in all_permutations(n)}


def check_without_replacement_equivalence(spec: ShufflerSpec, n: int, M: int, b: int,
                                          tol: float = 1e-12) -> CheckRecord:
    """Every conditional next-tuple probability equals 1/(T - t).

    For each t < T and every (partition, history) with positive probability,
    the candidates must be exactly the unseen tuples of the partition and
    each must have probability 1/(T - t).
    """
    T = n // (M * b)
    dist = enumerate_distribution(spec, n)
    worst = 0.0
    keys = 0
    for t in range(T):
        for (partition, history), cands in conditional_table(spec, n, M, b, t, dist).items():
            keys += 1
            unseen = set(partition) - set(history)
            target = 1.0 / (T - t)
            for cand in unseen | set(cands):
                expected = target if cand in unseen else 0.0
                worst = max(worst, abs(cands.get(cand, 0.0) - expected))
    return CheckRecord("without-replacement equivalence",
                       {"shuffler": spec.label(), "n": n, "M": M, "b": b},
                       observed=worst, expected=0.0, passed=worst <= tol,
                       detail=f"max |P - 1/(T-t)| over {keys} conditioning events")


@dataclass
class GapReport:
    max_gap: float
    bound: float
    epsilon: float
    precondition: bool
    passed: Optional[bool]
    t: int
    keys_checked: int
    keys_skipped: int


def check_conditional_gap(spec: ShufflerSpec, n: int, M: int, b: int, t: int,
                          budget: int = DEFAULT_BUDGET) -> GapReport:
    """Largest |P_v - P_u| over conditioning events at iteration t versus
    4 n eps / (n - b M t).

    Events with zero probability under the shuffler have no conditional law
    and are skipped (counted in ``keys_skipped``). When eps > bM/n the bound
    is not claimed and ``passed`` is None.
    """
    T = n // (M * b)
    if not 0 <= t or t + 1 >= T:
        raise ValueError(f"need 0 <= t and t + 1 < T={T}")
    eps = tv_exact(spec, n, budget).epsilon
    bound = 4.0 * n * eps / (n - b * M * t)
    precondition = eps <= b * M / n
    table_v = conditional_table(spec, n, M, b, t, budget=budget)
    table_u = conditional_table(spec, n, M, b, t, distribution=uniform_distribution(n))
    gap = 0.0
    skipped = 0
    for key, u_cands in table_u.items():
        v_cands = table_v.get(key)
        if v_cands is None:
            skipped += 1
            continue
        for cand in set(u_cands) | set(v_cands):
            gap = max(gap, abs(v_cands.get(cand, 0.0) - u_cands.get(cand, 0.0)))
    passed = (gap <= bound + 1e-12) if precondition else None
    return GapReport(gap, bound, eps, precondition, passed, t, len(table_u) - skipped, skipped)


# ---------------------------------------------------------------------------
# batch-mean identity


@dataclass
class IdentityReport:
    lhs: float
    rhs: float
    standard_error: float
    agree: bool
    trials: int
    z_score: float = 0.0


def verify_batch_mean_identity(n: int, b: int, t: int, values: Sequence[float], trials: int, rng=None,
                   permutations: Optional[np.ndarray] = None, z: float = 4.0) -> IdentityReport:
    """Monte-Carlo check of

        E[ mean(s) - mean of batch t+1 ] = (tb/n) E[ s_{1:tb} - s_{tb+1:n} ]

    under uniform permutations. Both sides are estimated from the same
    permutations; agreement means the mean paired difference is within
    ``z`` standard errors.
    """
    s = np.asarray(values, dtype=float)
    if s.shape != (n,) or b < 1 or t < 0 or t * b + b > n:
        raise ValueError("need len(values) == n, b >= 1, t >= 0 and tb + b <= n")
    if permutations is None:
        if trials < 2:
            raise ValueError("trials must be >= 2")
        rng = as_source(rng)
        permutations = rng.generator.permuted(np.tile(np.arange(n), (trials, 1)), axis=1)
    trials = permutations.shape[0]
    seq = s[permutations]
    tb = t * b
    lhs = s.mean() - seq[:, tb:tb + b].mean(axis=1)
    if tb:
        rhs = tb / n * (seq[:, :tb].mean(axis=1) - seq[:, tb:].mean(axis=1))
    else:
        rhs = np.zeros(trials)
    diff = lhs - rhs
    se = float(diff.std(ddof=1) / math.sqrt(trials))
    gap = abs(float(diff.mean()))
    # when the batch is the whole remainder both sides coincide path by path
    # and only rounding is left, so allow an absolute floor
    floor = 1e-12 * max(1.0, float(np.abs(s).max()))
    agree = gap <= z * se + floor
    z_score = max(0.0, gap - floor) / se if se > 0 else 0.0
    return IdentityReport(float(lhs.mean()), float(rhs.mean()), se, bool(agree), trials, z_score)


# ---------------------------------------------------------------------------
# rate predictions (all O(.) constants set to 1)

# regime-objective bound identifiers; ``insufficient-*`` add the shuffling-error terms
BOUNDS = ("global-strongly-convex", "global-convex", "global-nonconvex",
          "local-strongly-convex", "local-convex", "local-nonconvex",
          "insufficient-strongly-convex", "insufficient-convex", "insufficient-nonconvex",
          "iid-strongly-convex")


@dataclass
class Term:
    name: str
    magnitude: float
    exponent: float


@dataclass
class RatePrediction:
    theorem: str
    terms: list
    dominant: Term
    predicted_exponent: float
    params: dict = field(default_factory=dict)

    def term(self, name: str) -> Term:
        for term in self.terms:
            if term.name == name:
                return term
        raise KeyError(name)


def _need(params, *names):
    missing = [k for k in names if params.get(k) is None]
    if missing:
        raise ValueError(f"missing parameter(s): {', '.join(missing)}")
    return [float(params[k]) for k in names]


def _min_group(left: list, right: list) -> list:
    """min{sum(left), sum(right)}: keep whichever branch is smaller."""
    if sum(t.magnitude for t in left) <= sum(t.magnitude for t in right):
        return left
    return right


def _terms(theorem: str, p: dict) -> list:
    if theorem.endswith("strongly-convex"):
        n, M, b, S, kappa = _need(p, "n", "M", "b", "S", "kappa")
        bM, Sn = b * M, S * n
        fast = [Term("kappa^2 (bM)^2 log(Sn) / (Sn)^2", kappa ** 2 * bM ** 2 * math.log(Sn) / Sn ** 2, -2.0)]
        if theorem == "iid-strongly-convex":
            return _min_group([Term("bM / (Sn)", bM / Sn, -1.0)], fast) + [Term("1 / (Sn)", 1.0 / Sn, -1.0)]
        fast.append(Term("kappa^2 bM log(n) / (S n^2)", kappa ** 2 * bM * math.log(n) / (S * n ** 2), -1.0))
        floor_scale = M if theorem == "local-strongly-convex" else 1.0
        floor_name = "M log(n) / n" if theorem == "local-strongly-convex" else "log(n) / n"
        if theorem == "insufficient-strongly-convex":
            (eps,) = _need(p, "epsilon")
            fast.append(Term("kappa^2 n eps^2 / (S bM)", kappa ** 2 * n * eps ** 2 / (S * bM), -1.0))
        terms = _min_group([Term("bM / (Sn)", bM / Sn, -1.0)], fast)
        terms.append(Term(floor_name, floor_scale * math.log(n) / n, 0.0))
        if theorem == "insufficient-strongly-convex":
            terms.append(Term("n eps^2 / (bM)", n * eps ** 2 / bM, 0.0))
        return terms
    if theorem in ("global-convex", "local-convex", "insufficient-convex"):
        n, M, b, S = _need(p, "n", "M", "b", "S")
        terms = [Term("1 / sqrt(nS)", 1.0 / math.sqrt(n * S), -0.5),
                 Term("bM / (nS)", b * M / (n * S), -1.0)]
        if theorem == "local-convex":
            terms.append(Term("sqrt(M / n)", math.sqrt(M / n), 0.0))
        else:
            terms.append(Term("sqrt(1 / n)", math.sqrt(1.0 / n), 0.0))
        if theorem == "insufficient-convex":
            (eps,) = _need(p, "epsilon")
            terms.append(Term("eps ln(n)", eps * math.log(n), 0.0))
        return terms
    if theorem in ("global-nonconvex", "local-nonconvex", "insufficient-nonconvex"):
        n, S = _need(p, "n", "S")
        scale = float(p.get("rho", 1.0)) * float(p.get("initial_gap", 1.0))
        if theorem == "insufficient-nonconvex":
            scale = 1.0
        terms = [Term("sqrt(gap rho / (Sn))", math.sqrt(scale / (S * n)), -0.5)]
        if theorem == "local-nonconvex":
            (M,) = _need(p, "M")
            terms.append(Term("M log(n) / n", M * math.log(n) / n, 0.0))
        else:
            terms.append(Term("log(n) / n", math.log(n) / n, 0.0))
        if theorem == "insufficient-nonconvex":
            M, b, eps = _need(p, "M", "b", "epsilon")
            terms.append(Term("n eps^2 / (bM)", n * eps ** 2 / (b * M), 0.0))
        return terms
    raise ValueError(f"unknown bound {theorem!r}; expected one of {BOUNDS}")


def predict_rate(theorem: str, params: Mapping) -> RatePrediction:
    """Evaluate every bound term with unit constants and pick the largest.

    ``predicted_exponent`` is the dominant term's power of S at fixed n, M,
    b (log factors ignored), which is also its slope against effective
    passes.
    """
    terms = _terms(theorem, dict(params))
    for term in terms:
        if not (term.magnitude > 0 and math.isfinite(term.magnitude)):
            raise ValueError(f"term {term.name} evaluated to {term.magnitude}")
    dominant = max(terms, key=lambda term: term.magnitude)
    return RatePrediction(theorem, terms, dominant, dominant.exponent, dict(params))


def corollary_predicates(params: Mapping) -> dict:
    """Regime predicates with unit constants. Heuristic: the underlying
    bounds hide constants."""
    n, M, b, S = _need(params, "n", "M", "b", "S")
    bM = b * M
    out = {
        "convex_comparable_to_iid": S <= bM / math.sqrt(n),
        "convex_linear_speedup": S > bM / math.sqrt(n),
        "nonconvex_comparable_and_linear_speedup": S < n,
        "local_nonconvex_speedup": S < n / M,
        "heuristic": True,
    }
    if params.get("kappa") is not None:
        k2 = float(params["kappa"]) ** 2
        out["strongly_convex_comparable_to_iid"] = S <= bM * k2 / n
        out["strongly_convex_linear_speedup"] = S >= bM * max(1.0, k2 / n)
    if params.get("epsilon") is not None:
        eps = float(params["epsilon"])
        out["global_insufficiency_harmless"] = eps <= math.sqrt(bM) / n
    if params.get("epsilon_local") is not None:
        out["local_insufficiency_harmless"] = float(params["epsilon_local"]) <= M * math.sqrt(b) / n
    return out


# ---------------------------------------------------------------------------
# trace measurements


def epochs_to_target(trace: MetricsTrace, metric: str, target: float) -> Optional[float]:
    """Effective passes at the first record with metric <= target, else None."""
    values = trace.metric(metric)
    hits = np.flatnonzero(values <= target)
    if hits.size == 0:
        return None
    return float(trace.effective_passes[hits[0]])


@dataclass
class SpeedupRow:
    M: int
    epochs: Optional[float]
    alpha: Optional[float]
    speedup: Optional[float]
    reached: bool


def speedup(traces: Mapping[int, MetricsTrace], target: float, metric: str = "f_gap",
            baseline: int = 1) -> dict:
    """speedup_M = M / alpha_M, alpha_M = epochs(M) / epochs(baseline).

    Traces that never reach the target are reported with ``reached=False``
    and no ratio.
    """
    if baseline not in traces:
        raise ValueError(f"baseline M={baseline} missing from traces")
    epochs = {M: epochs_to_target(tr, metric, target) for M, tr in traces.items()}
    base = epochs[baseline]
    rows = {}
    for M in sorted(traces):
        e = epochs[M]
        if e is None or base is None:
            rows[M] = SpeedupRow(M, e, None, None, e is not None)
            continue
        alpha = e / base
        rows[M] = SpeedupRow(M, e, alpha, (M / baseline) / alpha, True)
    return rows


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lx, ly = np.log(x), np.log(y)
    lx = lx - lx.mean()
    return float(lx @ (ly - ly.mean()) / (lx @ lx))


@dataclass
class SlopeReport:
    slope: float
    points: int
    excluded: int


def rate_exponent(trace: MetricsTrace, metric: str, window=None, min_points: int = 10) -> SlopeReport:
    """Log-log slope of ``metric`` against effective passes.

    ``window`` is a ``slice`` of record indices, a ``(start, stop)`` pair of
    fractions of the run, or None for everything. Non-positive values are
    dropped and counted in ``excluded``.
    """
    x = trace.effective_passes
    y = trace.metric(metric)
    k = len(x)
    if window is None:
        sel = slice(0, k)
    elif isinstance(window, slice):
        sel = window
    else:
        lo, hi = window
        sel = slice(int(math.floor(lo * k)), int(math.ceil(hi * k)))
    x, y = x[sel], y[sel]
    keep = np.isfinite(y) & (y > 0)
    if keep.sum() < min_points:
        raise ValueError(f"need at least {min_points} positive points, got {int(keep.sum())}")
    return SlopeReport(loglog_slope(x[keep], y[keep]), int(keep.sum()), int((~keep).sum()))


def synthetic_trace(passes, values, metric: str = "f_gap") -> MetricsTrace:
    """Build a trace holding ``values`` under ``metric``; other metrics NaN."""
    passes = np.asarray(passes, dtype=float)
    k = passes.size
    cols = {name: np.full(k, np.nan) for name in ("f_gap", "dist_sq", "grad_norm_sq")}
    cols[metric] = np.asarray(values, dtype=float)
    return MetricsTrace(epoch=np.ones(k, dtype=int), iteration=np.arange(1, k + 1),
                        effective_passes=passes, f_gap=cols["f_gap"], dist_sq=cols["dist_sq"],
                        grad_norm_sq=cols["grad_norm_sq"], lr=np.full(k, np.nan),
                        loss=np.full(k, np.nan), T=k)

