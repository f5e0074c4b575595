"""Command-line front end: ``run``, ``sweep``, ``verify`` and ``tv``.

Exit codes: 0 ok, 1 verification failure, 2 config error, 3 numeric abort,
4 enumeration budget exceeded.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

from .. import analysis
from ..errors import BudgetExceeded, DivisibilityError
from ..shuffling import MAX_ENUMERABLE_N, RIFFLE, ShufflerSpec, normalize_algorithm
from ..rng import RandomnessSource
from .config import ConfigError, load_config
from .experiments import (prepare, run_experiment, run_output_dir, run_sweep, write_run_outputs,
                          write_sweep_outputs)
from .outputs import resolve_output_dir, write_atomic, write_json
from .verify import GROUPS, run_battery

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC, EXIT_BUDGET = 0, 1, 2, 3, 4


def _load(path):
    try:
        return load_config(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None


def cmd_run(args) -> int:
    config = _load(args.config)
    result = run_experiment(config)
    out = Path(args.output_dir) if args.output_dir else run_output_dir(config)
    write_run_outputs(result, out)
    if result.status != "ok":
        print(f"numeric abort: {result.error}", file=sys.stderr)
        print(f"partial outputs in {out}", file=sys.stderr)
        return EXIT_NUMERIC
    target = result.summary["target"]
    final = result.trace.metric(target["metric"])[-1]
    print(f"{config.name}: {result.summary['iterations']} iterations, "
          f"final {target['metric']}={final:.6g}")
    if target["value"] is not None:
        reached = target["epochs_to_target"]
        print(f"epochs to target {target['value']:g}: {'not reached' if reached is None else f'{reached:g}'}")
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _load(args.config)
    if args.parallel:
        config = dataclasses.replace(config, parallel=args.parallel)
    sweep = run_sweep(config, prepare(config))
    out = Path(args.output_dir) if args.output_dir else run_output_dir(config)
    write_sweep_outputs(sweep, out)
    failed = [label for label, r in sweep.results.items() if r.status != "ok"]
    for row in sweep.speedup_rows:
        value = "not reached" if row["speedup"] is None else f"{row['speedup']:.3f}"
        print(f"speedup {row['regime']} S={row['S']} h={row['rounds']} seed={row['seed']} "
              f"M={row['M']}: {value}")
    for row in sweep.regime_rows:
        epochs = "not reached" if row["epochs_to_target"] is None else f"{row['epochs_to_target']:g}"
        print(f"{row['regime']} M={row['M']} S={row['S']} h={row['rounds']} seed={row['seed']}: "
              f"epochs to target {epochs} [{row['status']}]")
    print(f"outputs in {out}")
    if failed:
        print(f"{len(failed)} cell(s) aborted: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_verify(args) -> int:
    started = time.perf_counter()
    records = run_battery(seed=args.seed, inject_biased=args.inject_biased_shuffler,
                          groups=args.only or None, emit=print)
    failed = [(g, r) for g, r in records if r.passed is False]
    elapsed = time.perf_counter() - started
    if args.json:
        write_json(args.json, {"seed": args.seed, "seconds": elapsed, "passed": not failed,
                               "records": [{"group": g, **r.to_dict()} for g, r in records]})
    print(f"{len(records) - len(failed)}/{len(records)} checks passed in {elapsed:.1f}s")
    if failed:
        for group, record in failed:
            print(f"FAILED [{group}] {record.line()}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def parse_rounds(text: str) -> list:
    """``"3"`` or an inclusive range ``"1..8"``."""
    if ".." in text:
        lo, hi = (int(v) for v in text.split("..", 1))
        if hi < lo:
            raise argparse.ArgumentTypeError(f"empty range {text!r}")
        return list(range(lo, hi + 1))
    return [int(text)]


def shuffling_error(spec: ShufflerSpec, n: int, mode: str, trials: int, seed: int):
    if mode == "empirical":
        return analysis.tv_empirical(spec, n, trials, RandomnessSource(seed, 61, spec.rounds))
    if spec.algorithm == RIFFLE and n > MAX_ENUMERABLE_N:
        eps = analysis.riffle_tv_rising_sequences(n, spec.rounds)
        return analysis.ShufflingErrorReport(eps, "exact-rising-sequences", n, spec)
    return analysis.tv_exact(spec, n)


def cmd_tv(args) -> int:
    try:
        alg = normalize_algorithm(args.alg)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    rounds = args.h
    curve = []
    try:
        for h in rounds:
            report = shuffling_error(ShufflerSpec(alg, h), args.n, args.mode, args.trials, args.seed)
            curve.append((h, report.epsilon))
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}; try --mode empirical", file=sys.stderr)
        return EXIT_BUDGET
    if len(curve) == 1:
        print(f"{curve[0][1]:.6f}")
        return EXIT_OK
    for h, eps in curve:
        print(f"{h} {eps:.6f}")
    path = Path(args.out) if args.out else resolve_output_dir("tv") / f"tv_{alg}_n{args.n}_{args.mode}.txt"
    body = f"# shuffling error of {alg}, n={args.n}, mode={args.mode}\n# h epsilon\n"
    body += "".join(f"{h} {eps!r}\n" for h, eps in curve)
    write_atomic(path, body)
    print(f"curve written to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shufflesgd",
                                     description="Distributed SGD under data shuffling regimes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment config")
    p.add_argument("config")
    p.add_argument("--output-dir", help="write here instead of <output_dir>/<name>")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run the cross product of a config's sweep axes")
    p.add_argument("config")
    p.add_argument("--output-dir")
    p.add_argument("--parallel", type=int, help="override the config's process count")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the verification battery")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-biased-shuffler", action="store_true",
                   help="negative control: pass the identity shuffler off as Fisher-Yates")
    p.add_argument("--only", nargs="+", choices=GROUPS, help="run only these check groups")
    p.add_argument("--json", help="also write the records as JSON to this path")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("tv", help="shuffling error (total variation to uniform)")
    p.add_argument("--alg", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--h", type=parse_rounds, default=[0], help="rounds, e.g. 3 or 1..8")
    p.add_argument("--mode", choices=("exact", "empirical"), default="exact")
    p.add_argument("--trials", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="curve file path for a range of h")
    p.set_defaults(func=cmd_tv)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivisibilityError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
