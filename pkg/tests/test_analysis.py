import math

import numpy as np
import pytest

from shufflesgd import analysis, objectives
from shufflesgd.analysis import (check_conditional_gap, corollary_predicates, predict_rate,
                                 rate_exponent, riffle_tv_rising_sequences, speedup,
                                 synthetic_trace, tv_empirical, tv_exact, verify_batch_mean_identity)
from shufflesgd.datasets import quadratic_centers
from shufflesgd.engine import LrSchedule, run
from shufflesgd.rng import RandomnessSource
from shufflesgd.schedule import StreamSpec, build_stream
from shufflesgd.shuffling import FISHER_YATES, IDENTITY, RIFFLE, TOP_TO_RANDOM, ShufflerSpec


def test_identity_error():
    assert tv_exact(ShufflerSpec(IDENTITY), 3).epsilon == pytest.approx(5 / 6, abs=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_fisher_yates_error_is_zero(n):
    assert abs(tv_exact(ShufflerSpec(FISHER_YATES), n).epsilon) <= 1e-12


def test_riffle_error_exact_vs_empirical():
    spec = ShufflerSpec(RIFFLE, 1)
    exact = tv_exact(spec, 3).epsilon
    assert exact == pytest.approx(1 / 3)
    empirical = tv_empirical(spec, 3, 1_000_000, RandomnessSource(1)).epsilon
    assert abs(exact - empirical) <= 0.005


def test_empirical_identity_is_exact():
    rep = tv_empirical(ShufflerSpec(IDENTITY), 3, 1000, RandomnessSource(0))
    assert rep.epsilon == pytest.approx(5 / 6, abs=1e-15)


def test_empirical_long_riffle_near_zero():
    rep = tv_empirical(ShufflerSpec(RIFFLE, 20), 4, 1_000_000, RandomnessSource(2))
    assert rep.epsilon <= 0.01
    assert rep.standard_error > 0


@pytest.mark.parametrize("n", [3, 4, 5, 6])
def test_rising_sequence_formula_matches_enumeration(n):
    for h in range(6):
        exact = tv_exact(ShufflerSpec(RIFFLE, h), n).epsilon
        assert riffle_tv_rising_sequences(n, h) == pytest.approx(exact, abs=1e-12)


def test_rising_sequence_formula_large_deck():
    # 7 rounds of a 52-card deck: the classical value 0.334
    assert riffle_tv_rising_sequences(52, 7) == pytest.approx(0.334, abs=5e-4)
    assert riffle_tv_rising_sequences(2000, 23) < math.sqrt(10) / 2000


def test_gap_is_zero_for_sufficient_shuffling():
    for t in range(3):
        rep = check_conditional_gap(ShufflerSpec(FISHER_YATES), 4, 1, 1, t)
        assert rep.max_gap <= 1e-15 and rep.bound == 0.0 and rep.passed


def test_gap_bound_for_riffle():
    h = next(h for h in range(30) if tv_exact(ShufflerSpec(RIFFLE, h), 4).epsilon <= 1 / 4)
    rep = check_conditional_gap(ShufflerSpec(RIFFLE, h), 4, 1, 1, 1)
    assert rep.precondition
    assert rep.bound == pytest.approx(4 * 4 * rep.epsilon / 3)
    assert rep.max_gap <= rep.bound


def test_gap_rejects_last_iteration():
    with pytest.raises(ValueError):
        check_conditional_gap(ShufflerSpec(FISHER_YATES), 4, 1, 1, 3)


def test_gap_precondition_not_met_gives_no_verdict():
    rep = check_conditional_gap(ShufflerSpec(IDENTITY), 4, 1, 1, 0)
    assert not rep.precondition and rep.passed is None


def test_identity_for_constant_values():
    rep = verify_batch_mean_identity(5, 1, 2, [3.0] * 5, 200, RandomnessSource(0))
    assert abs(rep.lhs) <= 1e-12 and abs(rep.rhs) <= 1e-12 and rep.agree


def test_identity_at_first_batch():
    rep = verify_batch_mean_identity(6, 2, 0, np.arange(6.0), 20_000, RandomnessSource(1))
    assert rep.rhs == 0.0
    assert abs(rep.lhs) <= 4 * rep.standard_error
    assert rep.agree


def test_identity_worked_case():
    rep = verify_batch_mean_identity(6, 1, 2, [1, 2, 3, 4, 5, 6], 100_000, RandomnessSource(3))
    assert rep.agree
    assert abs(rep.lhs - rep.rhs) <= 4 * rep.standard_error


def test_identity_rejects_bad_sizes():
    with pytest.raises(ValueError):
        verify_batch_mean_identity(6, 4, 1, np.ones(6), 10)


def test_nonconvex_prediction_small_s():
    pred = predict_rate("global-nonconvex", {"n": 10_000, "S": 5, "rho": 1.0, "initial_gap": 1.0})
    assert pred.dominant.name.startswith("sqrt")
    assert pred.predicted_exponent == -0.5


def test_strongly_convex_floor_dominates_at_large_s():
    pred = predict_rate("global-strongly-convex", {"n": 1000, "M": 1, "b": 1, "S": 10 ** 6, "kappa": 1.0})
    assert pred.dominant.name == "log(n) / n"
    assert pred.predicted_exponent == 0.0


def test_multi_worker_floor_scales_by_workers():
    params = {"n": 1000, "M": 4, "b": 5, "S": 10, "kappa": 10.0}
    single = predict_rate("global-strongly-convex", params).term("log(n) / n").magnitude
    multi = predict_rate("local-strongly-convex", params).term("M log(n) / n").magnitude
    assert multi == pytest.approx(4 * single, rel=1e-15)


def test_missing_parameter():
    with pytest.raises(ValueError, match="kappa"):
        predict_rate("global-strongly-convex", {"n": 10, "M": 1, "b": 1, "S": 1})


@pytest.mark.parametrize("theorem", analysis.BOUNDS)
def test_dominant_term_never_grows_with_epochs(theorem):
    base = {"n": 2000, "M": 2, "b": 5, "kappa": 10.0, "epsilon": 0.01, "rho": 1.0,
            "initial_gap": 1.0}
    values = [predict_rate(theorem, {**base, "S": S}).dominant.magnitude for S in (1, 2, 5, 20, 100, 1000)]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(values, values[1:]))


def test_corollary_predicates():
    pred = corollary_predicates({"n": 2000, "M": 4, "b": 5, "S": 2, "kappa": 10.0, "epsilon": 1e-3})
    assert pred["heuristic"]
    assert not pred["convex_comparable_to_iid"]
    assert pred["nonconvex_comparable_and_linear_speedup"]
    assert pred["global_insufficiency_harmless"]


def test_speedup_of_baseline_is_one():
    trace = synthetic_trace([1, 2, 3], [1.0, 0.1, 0.01])
    rows = speedup({1: trace}, 0.05)
    assert rows[1].speedup == 1.0


def test_equal_epochs_give_linear_speedup():
    trace = synthetic_trace([1, 2, 3], [1.0, 0.1, 0.01])
    rows = speedup({1: trace, 2: trace}, 0.05)
    assert rows[2].speedup == 2.0 and rows[2].alpha == 1.0


def test_unreached_target_is_flagged():
    rows = speedup({1: synthetic_trace([1, 2], [1.0, 0.1]),
                    2: synthetic_trace([1, 2], [1.0, 0.5])}, 0.2)
    assert rows[2].reached is False and rows[2].speedup is None


def test_speedup_diminishes_on_ill_conditioned_quadratic():
    # tight centers keep the sampling noise below the target, so the run
    # is limited by the number of steps per epoch
    d, n = 5, 400
    spec = objectives.quadratic(objectives.quadratic_spectrum(1.0, 100.0, d))
    data = quadratic_centers(n, d, seed=0, spread=1e-5)
    ref = objectives.solve_reference_optimum(spec, data)
    sched = LrSchedule("strongly-convex", mu=1.0, constant=10.0, offset=500.0)
    traces = {M: run(build_stream(StreamSpec("global", n, M, 1, 30, seed=0)), spec, data, sched,
                     np.ones(d), reference=ref) for M in (1, 2, 4, 8)}
    rows = speedup(traces, 1e-10)
    per_worker = [rows[M].speedup / M for M in (1, 2, 4, 8)]
    assert all(rows[M].reached for M in rows)
    assert all(b < a for a, b in zip(per_worker, per_worker[1:]))


def test_slope_of_halving_sequence():
    rep = rate_exponent(synthetic_trace([1, 2, 4, 8], [1, 0.5, 0.25, 0.125]), "f_gap", min_points=4)
    assert rep.slope == pytest.approx(-1.0, abs=1e-14)


def test_slope_of_square_root_law():
    t = np.arange(1, 200, dtype=float)
    rep = rate_exponent(synthetic_trace(t, 3.0 / np.sqrt(t)), "f_gap")
    assert rep.slope == pytest.approx(-0.5, abs=1e-10)


def test_slope_window_and_exclusions():
    t = np.arange(1, 41, dtype=float)
    values = 1.0 / t
    values[30] = 0.0
    rep = rate_exponent(synthetic_trace(t, values), "f_gap", window=(0.5, 1.0))
    assert rep.points == 19 and rep.excluded == 1
    assert rep.slope == pytest.approx(-1.0, abs=1e-12)
    with pytest.raises(ValueError):
        rate_exponent(synthetic_trace(t[:5], values[:5]), "f_gap")
