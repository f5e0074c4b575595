"""Objective families: per-sample losses f_i(w), the empirical risk F(w) and
their gradients.

Three families are supported:

* ``quadratic``: f_i(w) = 1/2 (w - c_i)^T diag(a) (w - c_i). The centers c_i are
  the dataset features; the spectrum ``a`` is shared, so mu = min(a),
  rho = max(a) and the minimizer (mean of the centers) are exact.
* ``logistic``: f_i(w) = log(1 + exp(-y_i <w, x_i>)) + lam/2 ||w||^2 with
  labels in {-1, +1}.
* ``mlp``: a small fully connected tanh network with softmax cross-entropy
  and the same per-sample L2 term.

Indices are 0-based. Every per-sample loss carries the full regularizer so
that the mean over the dataset reproduces F exactly.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .errors import ConvergenceError, DimensionError, IndexRangeError, NoReferenceOptimum
from .rng import RandomnessSource, as_source

QUADRATIC = "quadratic"
LOGISTIC = "logistic"
MLP = "mlp"
FAMILIES = (QUADRATIC, LOGISTIC, MLP)


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1:
            raise DimensionError("features must be a non-empty (n, d_in) array")
        y = np.asarray(self.labels)
        if y.shape != (x.shape[0],):
            raise DimensionError(f"labels shape {y.shape} does not match n={x.shape[0]}")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d_in(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.features[idx], self.labels[idx])


@dataclass(frozen=True)
class ObjectiveSpec:
    """Objective family plus its convexity/smoothness constants.

    Constants that are not defined (or not yet estimated) for the family are
    ``None``.
    """

    family: str
    dim_in: int
    spectrum: Optional[tuple] = None
    lam: float = 0.0
    hidden: tuple = ()
    classes: int = 0
    activation: str = "tanh"
    mu: Optional[float] = None
    rho: Optional[float] = None
    L: Optional[float] = None
    B_sq: Optional[float] = None
    G_sq: Optional[float] = None
    estimation: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.mu is not None and self.rho is not None and self.mu > self.rho * (1 + 1e-12):
            raise ValueError(f"mu={self.mu} exceeds rho={self.rho}")
        if self.family == MLP and self.activation != "tanh":
            raise ValueError("only tanh activations are implemented")

    @property
    def kappa(self) -> Optional[float]:
        if self.mu is None or self.rho is None:
            return None
        return self.rho / self.mu

    @property
    def layer_sizes(self) -> tuple:
        return (self.dim_in, *self.hidden, self.classes)

    @property
    def dim(self) -> int:
        if self.family == MLP:
            sizes = self.layer_sizes
            return sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))
        return self.dim_in


def quadratic(spectrum: Sequence[float]) -> ObjectiveSpec:
    a = tuple(float(v) for v in spectrum)
    if not a or min(a) <= 0:
        raise ValueError("spectrum must be non-empty and strictly positive")
    return ObjectiveSpec(QUADRATIC, dim_in=len(a), spectrum=a, mu=min(a), rho=max(a),
                         estimation={"mu": "exact", "rho": "exact"})


def quadratic_spectrum(mu: float, kappa: float, d: int) -> tuple:
    """Geometrically spaced spectrum from mu to kappa*mu."""
    if d == 1:
        return (float(mu),)
    return tuple(np.geomspace(mu, mu * kappa, d))


def logistic(dim_in: int, lam: float) -> ObjectiveSpec:
    if lam < 0:
        raise ValueError("lam must be non-negative")
    return ObjectiveSpec(LOGISTIC, dim_in=dim_in, lam=float(lam),
                         mu=float(lam) if lam > 0 else None,
                         estimation={"mu": "exact (lam)"} if lam > 0 else {})


def mlp(dim_in: int = 10, hidden: Sequence[int] = (16, 8), classes: int = 3,
        lam: float = 0.0) -> ObjectiveSpec:
    return ObjectiveSpec(MLP, dim_in=dim_in, hidden=tuple(hidden), classes=classes, lam=float(lam))


@dataclass(frozen=True, eq=False)
class GradientReport:
    value: float
    gradient: np.ndarray


# ---------------------------------------------------------------------------
# family kernels: (X, y, w) -> per-sample values (k,) and gradients (k, d) or
# their sums over the rows


def _quadratic_eval(spec, X, y, w, per_sample):
    a = np.asarray(spec.spectrum)
    diff = w[None, :] - X
    scaled = diff * a
    values = 0.5 * np.einsum("ij,ij->i", diff, scaled)
    if per_sample:
        return values, scaled
    return values, scaled.sum(axis=0)


def _logistic_eval(spec, X, y, w, per_sample):
    margins = y * (X @ w)
    values = np.logaddexp(0.0, -margins)
    coef = -y * expit(-margins)
    lam = spec.lam
    if lam:
        values = values + 0.5 * lam * float(w @ w)
    if per_sample:
        grads = coef[:, None] * X
        if lam:
            grads = grads + lam * w[None, :]
        return values, grads
    grad = X.T @ coef
    if lam:
        grad = grad + lam * X.shape[0] * w
    return values, grad


def _unpack_mlp(spec, w):
    sizes = spec.layer_sizes
    params = []
    pos = 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        W = w[pos:pos + a * b].reshape(a, b)
        pos += a * b
        c = w[pos:pos + b]
        pos += b
        params.append((W, c))
    return params


def _mlp_eval(spec, X, y, w, per_sample):
    params = _unpack_mlp(spec, w)
    acts = [X]
    h = X
    for W, c in params[:-1]:
        h = np.tanh(h @ W + c)
        acts.append(h)
    W, c = params[-1]
    logits = h @ W + c
    labels = y.astype(int)
    k = X.shape[0]
    logp = log_softmax(logits, axis=1)
    values = -logp[np.arange(k), labels]
    delta = softmax(logits, axis=1)
    delta[np.arange(k), labels] -= 1.0

    pieces = [None] * len(params)
    for layer in range(len(params) - 1, -1, -1):
        W, _ = params[layer]
        h_in = acts[layer]
        if per_sample:
            gW = np.einsum("ki,kj->kij", h_in, delta).reshape(k, -1)
            pieces[layer] = np.concatenate([gW, delta], axis=1)
        else:
            pieces[layer] = np.concatenate([(h_in.T @ delta).ravel(), delta.sum(axis=0)])
        if layer:
            delta = (delta @ W.T) * (1.0 - h_in ** 2)
    grads = np.concatenate(pieces, axis=1 if per_sample else 0)
    lam = spec.lam
    if lam:
        values = values + 0.5 * lam * float(w @ w)
        grads = grads + (lam * w[None, :] if per_sample else lam * k * w)
    return values, grads


_KERNELS = {QUADRATIC: _quadratic_eval, LOGISTIC: _logistic_eval, MLP: _mlp_eval}


def _check_w(spec, data, w):
    w = np.asarray(w, dtype=float)
    if w.shape != (spec.dim,):
        raise DimensionError(f"parameter shape {w.shape} != ({spec.dim},)")
    if data.d_in != spec.dim_in:
        raise DimensionError(f"data dimension {data.d_in} != objective input dimension {spec.dim_in}")
    return w


def _check_indices(data, indices):
    idx = np.asarray(indices, dtype=int).ravel()
    if idx.size == 0:
        raise IndexRangeError("index set is empty")
    if idx.min() < 0 or idx.max() >= data.n:
        raise IndexRangeError(f"index out of range for n={data.n}")
    return idx


def loss_and_grad_single(spec: ObjectiveSpec, data: Dataset, w, i: int) -> GradientReport:
    w = _check_w(spec, data, w)
    if not 0 <= int(i) < data.n:
        raise IndexRangeError(f"index {i} out of range for n={data.n}")
    values, grads = _KERNELS[spec.family](spec, data.features[i:i + 1], data.labels[i:i + 1], w, True)
    return GradientReport(float(values[0]), grads[0])


def loss_and_grad_batch(spec: ObjectiveSpec, data: Dataset, w, indices) -> GradientReport:
    """Sum (not mean) of f_i and grad f_i over ``indices``."""
    w = _check_w(spec, data, w)
    idx = _check_indices(data, indices)
    values, grad = _KERNELS[spec.family](spec, data.features[idx], data.labels[idx], w, False)
    return GradientReport(float(values.sum()), grad)


def full_objective(spec: ObjectiveSpec, data: Dataset, w) -> GradientReport:
    w = _check_w(spec, data, w)
    values, grad = _KERNELS[spec.family](spec, data.features, data.labels, w, False)
    return GradientReport(float(values.sum()) / data.n, grad / data.n)


def per_sample_gradients(spec: ObjectiveSpec, data: Dataset, w):
    """Per-sample losses (n,) and gradients (n, d) at ``w``."""
    w = _check_w(spec, data, w)
    return _KERNELS[spec.family](spec, data.features, data.labels, w, True)


def default_w0(spec: ObjectiveSpec, seed: int = 0) -> np.ndarray:
    """Zero for the convex families; N(0, 0.1^2) with a fixed seed for the MLP."""
    if spec.family == MLP:
        return RandomnessSource(seed, 7).normal(0.0, 0.1, spec.dim)
    return np.zeros(spec.dim)


def logistic_smoothness(spec: ObjectiveSpec, data: Dataset) -> float:
    """Upper bound lam + ||X||_2^2 / (4n) on the Hessian of the logistic risk."""
    top = np.linalg.norm(data.features, 2) ** 2
    return spec.lam + top / (4.0 * data.n)


def _hessian_norm_estimate(spec, data, w, rng, iterations=20, step=1e-5):
    """Power iteration on finite-difference Hessian-vector products."""
    v = rng.normal(size=spec.dim)
    v /= np.linalg.norm(v)
    g0 = full_objective(spec, data, w).gradient
    est = 0.0
    for _ in range(iterations):
        hv = (full_objective(spec, data, w + step * v).gradient - g0) / step
        est = float(np.linalg.norm(hv))
        if est == 0.0:
            break
        v = hv / est
    return est


def estimate_constants(spec: ObjectiveSpec, data: Dataset, sample_count: int = 64,
                       radius: float = 1.0, rng=None) -> ObjectiveSpec:
    """Estimate B^2 and G^2 as maxima of squared gradient norms.

    The first sample point is the origin; the remaining ``sample_count - 1``
    points are uniform in the ball of the given radius. The maxima are lower
    bounds of the true suprema. Quadratic mu/rho stay exact; the logistic rho
    uses the data-derived Hessian bound; the MLP rho is a power-iteration
    estimate of the Hessian norm at the sampled points. L is set to sqrt(G^2).
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = as_source(rng)
    d = spec.dim
    points = [np.zeros(d)]
    for _ in range(sample_count - 1):
        u = rng.normal(size=d)
        u *= radius * rng.random() ** (1.0 / d) / np.linalg.norm(u)
        points.append(u)

    b_sq = g_sq = 0.0
    for w in points:
        _, grads = per_sample_gradients(spec, data, w)
        b_sq = max(b_sq, float(np.max(np.einsum("ij,ij->i", grads, grads))))
        g = grads.mean(axis=0)
        g_sq = max(g_sq, float(g @ g))

    method = f"max over {sample_count} points in ball(radius={radius}) incl. origin"
    updates = {"B_sq": b_sq, "G_sq": g_sq, "L": math.sqrt(g_sq)}
    estimation = dict(spec.estimation, B_sq=method, G_sq=method, L="sqrt(G_sq)")
    if spec.family == QUADRATIC:
        updates.update(mu=min(spec.spectrum), rho=max(spec.spectrum))
    elif spec.family == LOGISTIC:
        updates["rho"] = logistic_smoothness(spec, data)
        estimation["rho"] = "lam + ||X||_2^2/(4n) (data bound)"
    else:
        probe = points[: min(len(points), 8)]
        updates["rho"] = max(_hessian_norm_estimate(spec, data, w, rng) for w in probe)
        estimation["rho"] = f"finite-difference power iteration at {len(probe)} points"
    return dataclasses.replace(spec, estimation=estimation, **updates)


def solve_reference_optimum(spec: ObjectiveSpec, data: Dataset, tolerance: float = 1e-10,
                            max_iterations: int = 200_000):
    """Certified minimizer (w*, F*) for the convex families."""
    if spec.family == MLP:
        raise NoReferenceOptimum("the MLP objective has no certified minimizer")
    if spec.family == QUADRATIC:
        if data.d_in != spec.dim:
            raise DimensionError("center dimension does not match spectrum")
        w = data.features.mean(axis=0)
        return w, full_objective(spec, data, w).value

    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    rho = logistic_smoothness(spec, data)
    mu = spec.lam
    # Nesterov's constant-momentum scheme for strongly convex objectives
    beta = (math.sqrt(rho) - math.sqrt(mu)) / (math.sqrt(rho) + math.sqrt(mu)) if mu > 0 else 0.9
    w = np.zeros(spec.dim)
    y = w.copy()
    for _ in range(max_iterations):
        g = full_objective(spec, data, w).gradient
        if np.linalg.norm(g) <= tolerance:
            return w, full_objective(spec, data, w).value
        gy = full_objective(spec, data, y).gradient
        w_next = y - gy / rho
        y = w_next + beta * (w_next - w)
        w = w_next
    raise ConvergenceError(f"gradient norm did not reach {tolerance} in {max_iterations} iterations")
