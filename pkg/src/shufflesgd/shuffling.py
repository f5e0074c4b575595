"""Permutation generators and their exact output distributions.

A permutation is a tuple/array ``p`` of length n where ``p[t]`` is the index
placed at position t, i.e. the deck order after shuffling a deck that started
as ``0, 1, ..., n-1``.

Algorithms:

* ``fisher-yates``: sufficient shuffling; exactly uniform over n! orders.
* ``riffle``: ``rounds`` Gilbert-Shannon-Reeds riffles. Each card is sent to
  the top or bottom packet by a fair coin (equivalently a Binomial(n, 1/2)
  cut followed by a uniform interleaving).
* ``top-to-random``: ``rounds`` moves of the top card to one of the n
  positions, chosen uniformly.
* ``identity``: no shuffling at all.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceeded
from .rng import RandomnessSource, as_source

FISHER_YATES = "fisher-yates"
RIFFLE = "riffle"
TOP_TO_RANDOM = "top-to-random"
IDENTITY = "identity"
ALGORITHMS = (FISHER_YATES, RIFFLE, TOP_TO_RANDOM, IDENTITY)

DEFAULT_BUDGET = 10 ** 7
MAX_ENUMERABLE_N = 6

_ALIASES = {"fisheryates": FISHER_YATES, "fy": FISHER_YATES, "gsr": RIFFLE,
            "toptorandom": TOP_TO_RANDOM, "top2random": TOP_TO_RANDOM, "none": IDENTITY}


def normalize_algorithm(name: str) -> str:
    key = name.strip().lower().replace("_", "-")
    if key in ALGORITHMS:
        return key
    key = key.replace("-", "")
    if key in _ALIASES:
        return _ALIASES[key]
    raise ValueError(f"unknown shuffling algorithm {name!r}; expected one of {ALGORITHMS}")


@dataclass(frozen=True)
class ShufflerSpec:
    algorithm: str = FISHER_YATES
    rounds: int = 0

    def __post_init__(self):
        object.__setattr__(self, "algorithm", normalize_algorithm(self.algorithm))
        if self.rounds < 0:
            raise ValueError("rounds must be non-negative")

    @property
    def sufficient(self) -> bool:
        return self.algorithm == FISHER_YATES

    def label(self) -> str:
        if self.algorithm in (RIFFLE, TOP_TO_RANDOM):
            return f"{self.algorithm}(h={self.rounds})"
        return self.algorithm


def is_permutation(p, n=None) -> bool:
    arr = np.asarray(p)
    n = arr.size if n is None else n
    return arr.size == n and np.array_equal(np.sort(arr), np.arange(n))


# ---------------------------------------------------------------------------
# single draws


def _riffle_once(deck: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """Cards with bit 0 at a position receive the top packet, in order."""
    order = np.argsort(bits, kind="stable")
    out = np.empty_like(deck)
    out[order] = deck
    return out


def _top_to_random_once(deck: np.ndarray, position: int) -> np.ndarray:
    rest = deck[1:]
    return np.concatenate([rest[:position], deck[:1], rest[position:]])


def shuffle(spec: ShufflerSpec, n: int, rng) -> np.ndarray:
    """Draw one permutation of ``range(n)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = as_source(rng)
    deck = np.arange(n)
    alg = spec.algorithm
    if alg == FISHER_YATES:
        if n > 1:
            # j_i uniform on {0..i} for i = n-1 down to 1
            js = rng.integers(0, np.arange(n, 1, -1))
            for i, j in zip(range(n - 1, 0, -1), js):
                deck[i], deck[j] = deck[j], deck[i]
    elif alg == RIFFLE:
        for _ in range(spec.rounds):
            deck = _riffle_once(deck, rng.integers(0, 2, n))
    elif alg == TOP_TO_RANDOM:
        for _ in range(spec.rounds):
            deck = _top_to_random_once(deck, int(rng.integers(0, n)))
    return deck


def sample_permutations(spec: ShufflerSpec, n: int, count: int, rng) -> np.ndarray:
    """``count`` independent permutations as a (count, n) array (vectorized)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = as_source(rng)
    decks = np.tile(np.arange(n), (count, 1))
    rows = np.arange(count)[:, None]
    alg = spec.algorithm
    if alg == FISHER_YATES:
        for i in range(n - 1, 0, -1):
            j = rng.integers(0, i + 1, count)
            a = decks[:, i].copy()
            decks[:, i] = decks[np.arange(count), j]
            decks[np.arange(count), j] = a
    elif alg == RIFFLE:
        for _ in range(spec.rounds):
            bits = rng.integers(0, 2, (count, n))
            order = np.argsort(bits, axis=1, kind="stable")
            out = np.empty_like(decks)
            out[rows, order] = decks
            decks = out
    elif alg == TOP_TO_RANDOM:
        cols = np.arange(n)[None, :]
        for _ in range(spec.rounds):
            pos = rng.integers(0, n, count)[:, None]
            src = np.where(cols < pos, cols + 1, np.where(cols == pos, 0, cols))
            decks = np.take_along_axis(decks, src, axis=1)
    return decks


# ---------------------------------------------------------------------------
# exact distributions


def _charge(spent: int, amount: int, budget: int) -> int:
    spent += amount
    if spent > budget:
        raise BudgetExceeded(f"enumeration needs more than {budget} atomic outcomes")
    return spent


def enumerate_distribution(spec: ShufflerSpec, n: int, budget: int = DEFAULT_BUDGET) -> dict:
    """Exact output distribution ``{permutation tuple: probability}``.

    Obtained by walking every internal random decision of the algorithm:
    all prod(i+1) swap choices for Fisher-Yates, all 2^n coin vectors per
    riffle round, all n insertion positions per top-to-random round. Round
    based shufflers are propagated round by round over the current support;
    the budget counts (support size x branches) summed over rounds.
    Permutations with probability zero are omitted.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > MAX_ENUMERABLE_N:
        raise BudgetExceeded(f"exact enumeration supports n <= {MAX_ENUMERABLE_N}, got {n}")
    alg = spec.algorithm
    identity = tuple(range(n))
    spent = 0
    if alg == IDENTITY or (alg in (RIFFLE, TOP_TO_RANDOM) and spec.rounds == 0):
        return {identity: 1.0}

    if alg == FISHER_YATES:
        spent = _charge(spent, math.factorial(n), budget)
        dist: dict = {}
        branch = 1.0 / math.factorial(n)
        for choice in itertools.product(*[range(i + 1) for i in range(n - 1, 0, -1)]):
            deck = list(identity)
            for i, j in zip(range(n - 1, 0, -1), choice):
                deck[i], deck[j] = deck[j], deck[i]
            key = tuple(deck)
            dist[key] = dist.get(key, 0.0) + branch
        return dist

    if alg == RIFFLE:
        moves = []
        for bits in itertools.product((0, 1), repeat=n):
            order = np.argsort(bits, kind="stable")
            target = [0] * n
            for src, pos in enumerate(order):
                target[pos] = src
            moves.append(tuple(target))
        weight = 0.5 ** n
    else:
        moves = []
        for pos in range(n):
            src = [0] * n
            for c in range(n):
                src[c] = c + 1 if c < pos else (0 if c == pos else c)
            moves.append(tuple(src))
        weight = 1.0 / n

    dist = {identity: 1.0}
    for _ in range(spec.rounds):
        spent = _charge(spent, len(dist) * len(moves), budget)
        nxt: dict = {}
        for perm, p in dist.items():
            pw = p * weight
            for src in moves:
                key = tuple(perm[s] for s in src)
                nxt[key] = nxt.get(key, 0.0) + pw
        dist = nxt
    return dist


def all_permutations(n: int):
    return list(itertools.permutations(range(n)))
