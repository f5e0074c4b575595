"""Per-worker index streams for the four data-access regimes.

``global``
    Every epoch draws a fresh permutation of [n], cuts it in order into M
    contiguous blocks of n/M and feeds each block to its worker in
    consecutive batches of b.
``local``
    Epoch 1 as ``global``. Later epochs keep the epoch-1 blocks D_m and only
    re-permute inside each block.
``iid``
    Every index of every batch is drawn uniformly from [n] with replacement.
``without-replacement``
    Per epoch, indices are drawn one at a time uniformly from those not yet
    used; within an iteration, draw j goes to worker ``j % M``.

Epoch ``s`` (1-based) of worker ``m`` (0-based) draws its randomness from
``RandomnessSource(seed, s, m)``; global draws use ``m = 0`` and local
block re-shuffles use ``m + 1``. Streams are therefore replayable from the
spec alone.

Indices are 0-based throughout.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DivisibilityError, InconsistentHistory
from .rng import RandomnessSource
from .shuffling import DEFAULT_BUDGET, ShufflerSpec, enumerate_distribution, shuffle

GLOBAL = "global"
LOCAL = "local"
IID = "iid"
WITHOUT_REPLACEMENT = "without-replacement"
REGIMES = (GLOBAL, LOCAL, IID, WITHOUT_REPLACEMENT)

_REGIME_ALIASES = {
    "globalshuffle": GLOBAL, "rsg": GLOBAL, "localshuffle": LOCAL, "rsl": LOCAL,
    "iidsampling": IID, "withreplacement": IID, "withoutreplacement": WITHOUT_REPLACEMENT,
    "wor": WITHOUT_REPLACEMENT,
}


def normalize_regime(name: str) -> str:
    key = name.strip().lower().replace("_", "-")
    if key in REGIMES:
        return key
    key = key.replace("-", "")
    if key in _REGIME_ALIASES:
        return _REGIME_ALIASES[key]
    raise ValueError(f"unknown regime {name!r}; expected one of {REGIMES}")


@dataclass(frozen=True)
class StreamSpec:
    regime: str
    n: int
    M: int = 1
    b: int = 1
    S: int = 1
    shuffler: ShufflerSpec = field(default_factory=ShufflerSpec)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "regime", normalize_regime(self.regime))
        for name in ("n", "M", "b", "S"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.n % (self.M * self.b):
            raise DivisibilityError(
                f"n={self.n} is not divisible by M*b={self.M * self.b}")

    @property
    def T(self) -> int:
        return self.n // (self.M * self.b)

    @property
    def block(self) -> int:
        return self.n // self.M


@dataclass(frozen=True, eq=False)
class BatchStream:
    """Realized schedule.

    ``batches[s, t, m]`` is the index array of worker m at iteration t of
    epoch s (all 0-based), shape (S, T, M, b). ``permutations`` holds the
    epoch permutation(s) used: shape (S, n) for ``global``; for ``local`` row
    0 is the epoch-1 global permutation and row s>0 is the concatenation of
    the re-ordered blocks. Sampling regimes store the draw order.
    """

    spec: StreamSpec
    batches: np.ndarray
    permutations: Optional[np.ndarray] = None

    def __post_init__(self):
        self.batches.setflags(write=False)

    def epoch(self, s: int) -> np.ndarray:
        return self.batches[s]

    def to_text(self) -> str:
        """Debug dump: one line per (s, t), ``s t: i i | i i`` (1-based s, t)."""
        lines = [f"# regime={self.spec.regime} n={self.spec.n} M={self.spec.M} "
                 f"b={self.spec.b} S={self.spec.S} shuffler={self.spec.shuffler.label()} "
                 f"seed={self.spec.seed}"]
        S, T = self.batches.shape[:2]
        for s in range(S):
            for t in range(T):
                workers = " | ".join(" ".join(map(str, batch)) for batch in self.batches[s, t])
                lines.append(f"{s + 1} {t + 1}: {workers}")
        return "\n".join(lines) + "\n"


def parse_stream_text(text: str) -> np.ndarray:
    """Inverse of :meth:`BatchStream.to_text` for the batch array."""
    rows = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        head, body = line.split(":", 1)
        s, t = (int(v) for v in head.split())
        rows[(s, t)] = [[int(v) for v in part.split()] for part in body.split("|")]
    S = max(k[0] for k in rows)
    T = max(k[1] for k in rows)
    return np.array([[rows[(s, t)] for t in range(1, T + 1)] for s in range(1, S + 1)])


def partition_permutation(perm, M: int, b: int) -> np.ndarray:
    """Cut a permutation of [n] into batches, shape (T, M, b).

    Worker m owns positions m*n/M .. (m+1)*n/M - 1 and reads them in order.
    """
    perm = np.asarray(perm)
    n = perm.size
    T = n // (M * b)
    return perm.reshape(M, T, b).transpose(1, 0, 2)


def build_stream(spec: StreamSpec) -> BatchStream:
    n, M, b, S, T = spec.n, spec.M, spec.b, spec.S, spec.T
    batches = np.empty((S, T, M, b), dtype=np.int64)
    perms = np.empty((S, n), dtype=np.int64)

    if spec.regime in (GLOBAL, LOCAL):
        first = shuffle(spec.shuffler, n, RandomnessSource(spec.seed, 1, 0))
        perms[0] = first
        batches[0] = partition_permutation(first, M, b)
        blocks = first.reshape(M, spec.block)
        for s in range(2, S + 1):
            if spec.regime == GLOBAL:
                perm = shuffle(spec.shuffler, n, RandomnessSource(spec.seed, s, 0))
            else:
                perm = np.concatenate([
                    blocks[m][shuffle(spec.shuffler, spec.block, RandomnessSource(spec.seed, s, m + 1))]
                    for m in range(M)])
            perms[s - 1] = perm
            batches[s - 1] = partition_permutation(perm, M, b)

    elif spec.regime == IID:
        for s in range(1, S + 1):
            draws = RandomnessSource(spec.seed, s, 0).integers(0, n, n)
            perms[s - 1] = draws
            batches[s - 1] = _deal_round_robin(draws, T, M, b)

    else:
        for s in range(1, S + 1):
            rng = RandomnessSource(spec.seed, s, 0)
            pool = list(range(n))
            picks = rng.integers(0, np.arange(n, 0, -1))
            order = []
            for k in picks:
                # P(next = j) = 1/|pool| over the unused indices
                pool[k], pool[-1] = pool[-1], pool[k]
                order.append(pool.pop())
            draws = np.array(order)
            perms[s - 1] = draws
            batches[s - 1] = _deal_round_robin(draws, T, M, b)

    return BatchStream(spec, batches, perms)


def _deal_round_robin(draws, T, M, b):
    # draw j of iteration t goes to worker j % M
    return np.asarray(draws).reshape(T, b, M).transpose(0, 2, 1)


# ---------------------------------------------------------------------------
# exact conditional batch distributions (global shuffling, small n)


def batch_tuples(perm, M: int, b: int) -> tuple:
    """The T batch tuples (B_1, ..., B_M) of an in-order partition, as sets."""
    return tuple(tuple(frozenset(batch.tolist()) for batch in row)
                 for row in partition_permutation(perm, M, b))


def conditional_table(shuffler: ShufflerSpec, n: int, M: int, b: int, t: int,
                      distribution: Optional[dict] = None,
                      budget: int = DEFAULT_BUDGET) -> dict:
    """All conditional next-tuple distributions at iteration ``t``.

    Returns ``{(partition, history): {candidate: probability}}`` where
    ``partition`` is the frozenset of the epoch's T batch tuples, ``history``
    the ordered tuples of iterations 1..t and ``candidate`` the tuple at
    iteration t+1. Keys whose conditioning event has probability zero are
    absent.
    """
    T = n // (M * b)
    if n % (M * b):
        raise DivisibilityError(f"n={n} is not divisible by M*b={M * b}")
    if not 0 <= t < T:
        raise ValueError(f"t must satisfy 0 <= t < T={T}")
    dist = distribution if distribution is not None else enumerate_distribution(shuffler, n, budget)
    mass: dict = defaultdict(float)
    joint: dict = defaultdict(lambda: defaultdict(float))
    for perm, p in dist.items():
        if p == 0.0:
            continue
        tuples = batch_tuples(np.asarray(perm), M, b)
        key = (frozenset(tuples), tuples[:t])
        mass[key] += p
        joint[key][tuples[t]] += p
    return {key: {cand: q / mass[key] for cand, q in cands.items()}
            for key, cands in joint.items()}


def conditional_batch_distribution(spec: StreamSpec, t: int, history: Sequence,
                                   partition=None, budget: int = DEFAULT_BUDGET) -> dict:
    """Exact distribution of the batch tuple at iteration t+1.

    ``history`` lists the t realized tuples (each a sequence of M index sets).
    ``partition``, when given, is the collection of all T batch tuples the
    epoch produced; conditioning on it as well makes the answer 1/(T - t)
    for each not-yet-seen tuple under sufficient shuffling. Without it the
    result is conditioned on the history alone.
    """
    if spec.regime != GLOBAL:
        raise ValueError("conditional distributions are defined for global shuffling")
    if len(history) != t:
        raise InconsistentHistory(f"history has {len(history)} tuples, expected t={t}")
    hist = tuple(tuple(frozenset(batch) for batch in tup) for tup in history)
    part = None
    if partition is not None:
        part = frozenset(tuple(frozenset(batch) for batch in tup) for tup in partition)
        if len(part) != spec.T or not set(hist) <= part:
            raise InconsistentHistory("history is not contained in the given partition")

    out: dict = defaultdict(float)
    total = 0.0
    for perm, p in enumerate_distribution(spec.shuffler, spec.n, budget).items():
        tuples = batch_tuples(np.asarray(perm), spec.M, spec.b)
        if tuples[:t] != hist or (part is not None and frozenset(tuples) != part):
            continue
        total += p
        out[tuples[t]] += p
    if total == 0.0:
        raise InconsistentHistory("history has probability zero under this shuffler")
    return {cand: q / total for cand, q in out.items()}
