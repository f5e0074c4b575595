"""Synthetic dataset generators used in place of RCV1 / CIFAR-10."""

from __future__ import annotations

import numpy as np

from .objectives import Dataset
from .rng import RandomnessSource

GENERATORS = ("quadratic-centers", "synthetic-logistic", "synthetic-gaussian-blobs")


def quadratic_centers(n: int, d: int, seed: int = 0, spread: float = 1.0,
                      ordered: bool = False) -> Dataset:
    """Gaussian centers c_i ~ N(0, spread^2 I).

    With ``ordered=True`` every coordinate is sorted independently, so the
    stored order is monotone along all axes (a worst case for a fixed
    visiting order). The per-coordinate values, and hence the minimizer, are
    unchanged.
    """
    rng = RandomnessSource(seed, 101)
    centers = rng.normal(0.0, spread, (n, d))
    if ordered:
        centers = np.sort(centers, axis=0)
    return Dataset(centers, np.zeros(n))


def synthetic_logistic(n: int, d: int, seed: int = 0, scale: float = 1.0,
                       flip: float = 0.05, ordered: bool = False) -> Dataset:
    """Features N(0, scale^2/d I), labels sign(<u, x>) with probability ``flip``
    of being flipped. ``ordered=True`` sorts the rows by label."""
    rng = RandomnessSource(seed, 202)
    X = rng.normal(0.0, scale / np.sqrt(d), (n, d))
    u = rng.normal(size=d)
    u /= np.linalg.norm(u)
    y = np.where(X @ u >= 0, 1.0, -1.0)
    y = np.where(rng.random(n) < flip, -y, y)
    if ordered:
        order = np.argsort(y, kind="stable")
        X, y = X[order], y[order]
    return Dataset(X, y)


def gaussian_blobs(n: int, d: int = 10, classes: int = 3, seed: int = 0,
                   separation: float = 1.0, ordered: bool = False) -> Dataset:
    """``classes`` isotropic unit-variance blobs with means drawn at distance
    ``separation`` scale; labels are class indices. Classes are balanced up
    to rounding."""
    rng = RandomnessSource(seed, 303)
    means = rng.normal(0.0, separation, (classes, d))
    labels = np.arange(n) % classes
    if not ordered:
        labels = labels[rng.generator.permutation(n)]
    else:
        labels = np.sort(labels)
    X = means[labels] + rng.normal(size=(n, d))
    return Dataset(X, labels.astype(float))


def make_dataset(generator: str, n: int, d: int, seed: int = 0, **options) -> Dataset:
    if generator == "quadratic-centers":
        return quadratic_centers(n, d, seed, **options)
    if generator == "synthetic-logistic":
        return synthetic_logistic(n, d, seed, **options)
    if generator == "synthetic-gaussian-blobs":
        return gaussian_blobs(n, d, seed=seed, **options)
    raise ValueError(f"unknown dataset generator {generator!r}")
