import math

import numpy as np
import pytest

from shufflesgd import engine, objectives
from shufflesgd.datasets import quadratic_centers, synthetic_logistic
from shufflesgd.engine import (CONSTANT, CONVEX, NON_CONVEX, STRONGLY_CONVEX, LrSchedule,
                               TrainState, lr_at, nonconvex_step, run, step)
from shufflesgd.errors import NumericAbort
from shufflesgd.objectives import Dataset, full_objective
from shufflesgd.schedule import StreamSpec, build_stream

SCALAR = objectives.quadratic([1.0])


def scalar_data(centers):
    return Dataset(np.asarray(centers, dtype=float)[:, None], np.zeros(len(centers)))


def test_strongly_convex_rate_value():
    assert lr_at(LrSchedule(STRONGLY_CONVEX, mu=1.0), s=1, t=4, T=10) == pytest.approx(0.5)


def test_strongly_convex_counts_across_epochs():
    sched = LrSchedule(STRONGLY_CONVEX, mu=2.0, offset=3.0)
    # k = (3-1)*5 + 2 = 12
    assert lr_at(sched, s=3, t=2, T=5) == pytest.approx(2.0 / (2.0 * 15))


def test_convex_rate_value():
    assert lr_at(LrSchedule(CONVEX, L=1.0), 1, 1, 7) == 1.0
    assert lr_at(LrSchedule(CONVEX, L=4.0), 2, 3, 5) == pytest.approx(math.sqrt(4.0 / 8))


def test_nonconvex_rate_saturates():
    rho = 1e6
    sched = LrSchedule(NON_CONVEX, rho=rho, B_sq=1e-9, b=1, M=1, S=1, initial_gap=1e6)
    assert lr_at(sched, 1, 1, 10) == 1.0 / (6.0 * rho)


def test_nonconvex_rate_formula():
    sched = LrSchedule(NON_CONVEX, rho=0.5, B_sq=2.0, b=5, M=2, S=4, initial_gap=3.0)
    T = 100
    noise = 3 * 0.5 * 2.0 / 10 * (1 + 584 * math.log(T) / T)
    expected = min(math.sqrt(2 * 3.0 / noise) / math.sqrt(4 * T), 1 / 3.0)
    assert nonconvex_step(sched, T) == pytest.approx(expected, rel=1e-15)
    assert lr_at(sched, 1, 1, T) == lr_at(sched, 4, T, T)


def test_schedule_validation():
    with pytest.raises(ValueError):
        LrSchedule(STRONGLY_CONVEX)
    with pytest.raises(ValueError):
        LrSchedule(CONSTANT, eta=-1.0)
    with pytest.raises(ValueError):
        lr_at(LrSchedule(CONSTANT, eta=1.0), 1, 0, 5)


def test_zero_gradient_leaves_w():
    data = scalar_data([2.0, 2.0])
    state = step(TrainState.start([2.0]), [np.array([0]), np.array([1])], SCALAR, data, 0.7)
    assert state.w.tolist() == [2.0]


def test_two_worker_step_arithmetic():
    data = scalar_data([1.0, 3.0])
    state = step(TrainState.start([0.0]), [np.array([0]), np.array([1])], SCALAR, data, 1.0)
    assert state.w.tolist() == [2.0]
    assert state.count == 1


def test_workers_versus_merged_batch():
    data = quadratic_centers(12, 3, seed=2)
    spec = objectives.quadratic([1.0, 2.0, 3.0])
    w0 = np.array([0.3, -0.2, 0.9])
    split = [np.array([0, 5, 7]), np.array([2, 3, 11])]
    a = step(TrainState.start(w0), split, spec, data, 0.1)
    b = step(TrainState.start(w0), [np.concatenate(split)], spec, data, 0.1)
    np.testing.assert_allclose(a.w, b.w, rtol=0, atol=1e-12)


def test_single_full_batch_step_is_gradient_descent():
    data = synthetic_logistic(10, 3, seed=1)
    spec = objectives.logistic(3, 0.1)
    stream = build_stream(StreamSpec("global", 10, M=1, b=10, S=1))
    w0 = np.array([0.5, -0.5, 0.25])
    trace = run(stream, spec, data, LrSchedule(CONSTANT, eta=0.3), w0)
    expected = w0 - 0.3 * full_objective(spec, data, w0).gradient
    np.testing.assert_allclose(trace.final_w, expected, rtol=1e-14)
    assert len(trace) == 1


def test_runs_are_bitwise_reproducible():
    data = synthetic_logistic(40, 4, seed=0)
    spec = objectives.logistic(4, 0.05)
    w_star, f_star = objectives.solve_reference_optimum(spec, data)
    sched = LrSchedule(CONVEX, L=1.0)
    traces = [run(build_stream(StreamSpec("global", 40, 2, 2, 3, seed=9)), spec, data, sched,
                  np.zeros(4), reference=(w_star, f_star)) for _ in range(2)]
    assert traces[0].to_csv() == traces[1].to_csv()


def test_scalar_quadratic_epoch_ends_decrease():
    data = scalar_data([-1.0, 0.5, 2.0, 4.5])
    w_star, f_star = objectives.solve_reference_optimum(SCALAR, data)
    stream = build_stream(StreamSpec("global", 4, M=1, b=1, S=3, seed=0))
    trace = run(stream, SCALAR, data, LrSchedule(STRONGLY_CONVEX, mu=1.0), np.array([10.0]),
                reference=(w_star, f_star))
    ends = trace.epoch_end("dist_sq")
    assert len(ends) == 3
    assert np.all(np.diff(ends) < 0)


def test_trace_records_and_w_bar():
    data = quadratic_centers(20, 2, seed=3)
    spec = objectives.quadratic([1.0, 2.0])
    ref = objectives.solve_reference_optimum(spec, data)
    stream = build_stream(StreamSpec("global", 20, M=2, b=5, S=3, seed=1))
    trace = run(stream, spec, data, LrSchedule(CONSTANT, eta=0.1), np.zeros(2), reference=ref,
                store_iterates=True)
    assert len(trace) == 6
    assert trace.effective_passes.tolist() == pytest.approx([0.5, 1.0, 1.5, 2.0, 2.5, 3.0])
    assert trace.epoch.tolist() == [1, 1, 2, 2, 3, 3]
    assert trace.iteration.tolist() == [1, 2, 1, 2, 1, 2]
    np.testing.assert_allclose(trace.w_bar, trace.iterates.mean(axis=0), rtol=1e-14)
    header = trace.to_csv().splitlines()[0]
    assert header == ",".join(engine.CSV_HEADER)


def test_divergence_aborts_with_location():
    data = scalar_data([1.0, -1.0])
    stream = build_stream(StreamSpec("global", 2, M=1, b=1, S=2000))
    with pytest.raises(NumericAbort) as info:
        run(stream, SCALAR, data, LrSchedule(CONSTANT, eta=5.0), np.array([1.0]))
    assert info.value.location is not None
