"""Experiment configuration: a JSON document validated into frozen dataclasses.

Validation errors carry the dotted path of the offending key and, when it can
be found in the source text, its line number, so ``shufflesgd run`` can point
at the exact line.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional

from ..engine import SCHEDULES
from ..objectives import FAMILIES
from ..datasets import GENERATORS
from ..schedule import normalize_regime
from ..shuffling import normalize_algorithm

METRICS = ("f_gap", "dist_sq", "grad_norm_sq", "grad_norm_sq_running_mean", "loss")
LR_SCALINGS = ("none", "linear")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based or None."""

    def __init__(self, message: str, path: str = "", line: Optional[int] = None):
        self.path = path
        self.line = line
        where = f"line {line}: " if line else ""
        at = f"{path}: " if path else ""
        super().__init__(f"{where}{at}{message}")


@dataclass(frozen=True)
class ObjectiveConfig:
    family: str
    # quadratic: geometric spectrum mu .. kappa*mu in dimension data.d
    mu: float = 1.0
    kappa: float = 10.0
    # logistic / mlp; None means 1/sqrt(n) for logistic and 0 for the MLP
    lam: Optional[float] = None
    hidden: tuple = (16, 8)
    classes: int = 3


@dataclass(frozen=True)
class DataConfig:
    generator: str
    n: int
    d: int
    seed: int = 0
    options: dict = field(default_factory=dict)


@dataclass(frozen=True)
class StreamConfig:
    regime: str = "global"
    M: int = 1
    b: int = 1
    S: int = 1
    algorithm: str = "fisher-yates"
    rounds: int = 0
    seed: int = 0


@dataclass(frozen=True)
class ScheduleConfig:
    """``overrides`` replace auto-filled constants (mu, L, rho, B_sq,
    initial_gap, eta, constant, offset)."""

    kind: str
    overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EstimationConfig:
    sample_count: int = 64
    radius: float = 1.0
    seed: int = 1


@dataclass(frozen=True)
class TargetConfig:
    metric: str = "f_gap"
    value: Optional[float] = None


@dataclass(frozen=True)
class SweepConfig:
    M: tuple = ()
    S: tuple = ()
    regime: tuple = ()
    rounds: tuple = ()
    seeds: tuple = (0,)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    objective: ObjectiveConfig
    data: DataConfig
    stream: StreamConfig
    schedule: ScheduleConfig
    target: TargetConfig = TargetConfig()
    estimation: EstimationConfig = EstimationConfig()
    sweep: SweepConfig = SweepConfig()
    w0: Optional[float] = None  # None: family default; a number fills every coordinate
    f_lower_bound: float = 0.0  # stands in for F* when no certified optimum exists
    lr_scaling: str = "none"
    output_dir: str = "runs"
    parallel: int = 1

    def to_dict(self) -> dict:
        """The JSON document this config parses from (schedule overrides inline)."""
        out = _plain(dataclasses.asdict(self))
        out["schedule"] = {"kind": self.schedule.kind, **self.schedule.overrides}
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def cells(self) -> list:
        """Cross product of the sweep axes as a list of override dicts.

        An empty axis keeps the base value. ``seed`` is the replicate index.
        """
        axes = {"M": self.sweep.M or (self.stream.M,), "S": self.sweep.S or (self.stream.S,),
                "regime": self.sweep.regime or (self.stream.regime,),
                "rounds": self.sweep.rounds or (self.stream.rounds,),
                "seed": self.sweep.seeds or (self.stream.seed,)}
        names = list(axes)
        return [dict(zip(names, combo)) for combo in itertools.product(*axes.values())]


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


# ---------------------------------------------------------------------------
# parsing


class _Reader:
    """Typed access to a JSON object with path-aware error messages."""

    def __init__(self, text: str, obj: dict, path: str = ""):
        self.text = text
        self.obj = obj
        self.path = path
        self.used: set = set()

    def fail(self, key: str, message: str):
        path = f"{self.path}.{key}" if self.path else key
        raise ConfigError(message, path, _line_of(self.text, path))

    def section(self, key: str, required: bool = True) -> "_Reader":
        value = self.raw(key, {} if not required else None)
        if not isinstance(value, dict):
            self.fail(key, "expected an object")
        path = f"{self.path}.{key}" if self.path else key
        return _Reader(self.text, value, path)

    def raw(self, key: str, default: Any = None):
        self.used.add(key)
        if key not in self.obj:
            if default is None:
                self.fail(key, "missing required key")
            return default
        return self.obj[key]

    def get(self, key: str, kind, default: Any = ..., *, positive=False, nonneg=False):
        self.used.add(key)
        if key not in self.obj:
            if default is ...:
                self.fail(key, "missing required key")
            return default
        value = self.obj[key]
        if value is None and default is None:
            return None
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if kind is int and isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
            self.fail(key, f"expected {kind.__name__}, got {type(value).__name__}")
        if kind is float and not math.isfinite(value):
            self.fail(key, "must be finite")
        if positive and not value > 0:
            self.fail(key, f"must be positive, got {value}")
        if nonneg and value < 0:
            self.fail(key, f"must be non-negative, got {value}")
        return value

    def int_list(self, key: str, *, positive=False) -> tuple:
        values = self.raw(key, [])
        if not isinstance(values, list):
            self.fail(key, "expected a list")
        out = []
        for v in values:
            if not isinstance(v, int) or isinstance(v, bool) or v < (1 if positive else 0):
                self.fail(key, f"entries must be {'positive' if positive else 'non-negative'} integers, got {v!r}")
            out.append(v)
        return tuple(out)

    def choice(self, key: str, normalize, default: Any = ...):
        value = self.get(key, str, default)
        try:
            return normalize(value)
        except ValueError as exc:
            self.fail(key, str(exc))

    def finish(self):
        extra = sorted(set(self.obj) - self.used)
        if extra:
            self.fail(extra[0], "unknown key")


def _line_of(text: str, path: str) -> Optional[int]:
    # walk the dotted path through the raw text, key by key
    pos = 0
    for key in path.split("."):
        idx = text.find(f'"{key}"', pos)
        if idx < 0:
            return None if pos == 0 else text.count("\n", 0, pos) + 1
        pos = idx
    return text.count("\n", 0, pos) + 1


def _member(options):
    def normalize(value):
        if value not in options:
            raise ValueError(f"expected one of {options}, got {value!r}")
        return value
    return normalize


def parse_config(text: str) -> ExperimentConfig:
    try:
        root = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno) from None
    if not isinstance(root, dict):
        raise ConfigError("top level must be an object", line=1)
    top = _Reader(text, root)

    o = top.section("objective")
    family = o.choice("family", _member(FAMILIES))
    objective = ObjectiveConfig(
        family=family,
        mu=o.get("mu", float, 1.0, positive=True),
        kappa=o.get("kappa", float, 10.0, positive=True),
        lam=o.get("lam", float, None, nonneg=True),
        hidden=o.int_list("hidden", positive=True) or (16, 8),
        classes=o.get("classes", int, 3, positive=True),
    )
    if objective.kappa < 1:
        o.fail("kappa", "must be >= 1")
    o.finish()

    dsec = top.section("data")
    options = dsec.raw("options", {})
    if not isinstance(options, dict):
        dsec.fail("options", "expected an object")
    data = DataConfig(generator=dsec.choice("generator", _member(GENERATORS)),
                      n=dsec.get("n", int, positive=True), d=dsec.get("d", int, positive=True),
                      seed=dsec.get("seed", int, 0, nonneg=True), options=dict(options))
    dsec.finish()

    s = top.section("stream")
    stream = StreamConfig(regime=s.choice("regime", normalize_regime, "global"),
                          M=s.get("M", int, 1, positive=True), b=s.get("b", int, 1, positive=True),
                          S=s.get("S", int, 1, positive=True),
                          algorithm=s.choice("algorithm", normalize_algorithm, "fisher-yates"),
                          rounds=s.get("rounds", int, 0, nonneg=True),
                          seed=s.get("seed", int, 0, nonneg=True))
    s.finish()

    sch = top.section("schedule")
    kind = sch.choice("kind", _member(SCHEDULES))
    overrides = {}
    for key in ("mu", "L", "rho", "B_sq", "initial_gap", "eta", "constant"):
        value = sch.get(key, float, None, positive=True)
        if value is not None:
            overrides[key] = value
    offset = sch.get("offset", float, None, nonneg=True)
    if offset is not None:
        overrides["offset"] = offset
    schedule = ScheduleConfig(kind, overrides)
    sch.finish()

    t = top.section("target", required=False)
    target = TargetConfig(metric=t.choice("metric", _member(METRICS), "f_gap"),
                          value=t.get("value", float, None, positive=True))
    t.finish()

    e = top.section("estimation", required=False)
    estimation = EstimationConfig(sample_count=e.get("sample_count", int, 64, positive=True),
                                  radius=e.get("radius", float, 1.0, positive=True),
                                  seed=e.get("seed", int, 1, nonneg=True))
    e.finish()

    w = top.section("sweep", required=False)
    regimes = w.raw("regime", [])
    if not isinstance(regimes, list):
        w.fail("regime", "expected a list")
    try:
        regimes = tuple(normalize_regime(r) for r in regimes)
    except (ValueError, AttributeError) as exc:
        w.fail("regime", str(exc))
    sweep = SweepConfig(M=w.int_list("M", positive=True), S=w.int_list("S", positive=True),
                        regime=regimes, rounds=w.int_list("rounds"),
                        seeds=w.int_list("seeds") or (stream.seed,))
    w.finish()

    config = ExperimentConfig(
        name=top.get("name", str, "experiment"),
        objective=objective, data=data, stream=stream, schedule=schedule, target=target,
        estimation=estimation, sweep=sweep,
        w0=top.get("w0", float, None),
        f_lower_bound=top.get("f_lower_bound", float, 0.0),
        lr_scaling=top.choice("lr_scaling", _member(LR_SCALINGS), "none"),
        output_dir=top.get("output_dir", str, "runs"),
        parallel=top.get("parallel", int, 1, positive=True),
    )
    top.finish()
    if config.lr_scaling == "linear" and schedule.kind not in ("non-convex", "constant"):
        top.fail("lr_scaling", "linear scaling applies to non-convex and constant schedules only")
    _check_divisibility(config, text)
    return config


def _check_divisibility(config: ExperimentConfig, text: str):
    n, b = config.data.n, config.stream.b
    for M in sorted({cell["M"] for cell in config.cells()}):
        if n % (M * b):
            path = "sweep.M" if config.sweep.M else "stream.M"
            raise ConfigError(f"n={n} is not divisible by M*b={M}*{b}={M * b}", path,
                              _line_of(text, path))


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def with_cell(config: ExperimentConfig, cell: dict) -> ExperimentConfig:
    stream = dataclasses.replace(config.stream, M=cell["M"], S=cell["S"], regime=cell["regime"],
                                 rounds=cell["rounds"], seed=cell["seed"])
    return dataclasses.replace(config, stream=stream, sweep=SweepConfig())

