import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cookiewalk import _kernels as K
from cookiewalk.env import EnvironmentSpec, ValidationError, make_environment
from cookiewalk.rng import RngStream, stream_key
from cookiewalk.walk import (
    StopCondition,
    StopReason,
    WalkState,
    dump_trajectory,
    ledger_from_path,
    run_coupled_dominating,
    run_coupled_naive,
    run_until,
    step,
)

strength = st.floats(0.5, 1.0, allow_nan=False)
rows = st.lists(strength, max_size=3).map(tuple)


def view_of(*row):
    return make_environment(EnvironmentSpec.homogeneous(row))


def test_step_examples():
    s = step(WalkState.at(0), view_of(1.0), 0.73)
    assert s.position == 1 and s.consumed_drift_pos == 1.0
    assert step(WalkState.at(0), view_of(0.5), 0.49).position == 1
    assert step(WalkState.at(0), view_of(0.5), 0.5).position == -1


def test_second_visit_uses_second_cookie():
    v = view_of(0.9, 0.8)
    s = WalkState.at(0)
    step(s, v, 0.1)  # right, eats 0.9 at 0
    step(s, v, 0.99)  # left from 1
    assert s.position == 0 and s.visits[0] == 2
    before = s.consumed_drift_pos
    step(s, v, 0.85)
    assert s.position == -1
    assert s.consumed_drift_pos - before == pytest.approx(0.6)


def test_step_rejects_bad_uniform():
    with pytest.raises(ValidationError):
        step(WalkState.at(0), view_of(0.5), 1.0)


def test_deterministic_march():
    s, rec, why = run_until(WalkState.at(0), view_of(1, 1), StopCondition.hit_level(5), RngStream(1))
    assert why is StopReason.LEVEL and s.steps == 5 and rec.passage_times[5] == 5
    assert rec.gaps == [1] * 5


def test_interval_stop():
    for seed in range(20):
        s, _, why = run_until(WalkState.at(0), view_of(0.5), StopCondition.hit_either(-3, 3), RngStream(seed))
        assert s.position in (-3, 3)
        assert why is (StopReason.LEFT if s.position == -3 else StopReason.RIGHT)


def test_truncation_and_horizon():
    s, _, why = run_until(WalkState.at(0), view_of(0.5), StopCondition.hit_level(10**6, max_steps=50), RngStream(3))
    assert why is StopReason.TRUNCATED and s.steps == 50
    s, _, why = run_until(WalkState.at(0), view_of(0.5), StopCondition(max_steps=40), RngStream(3))
    assert why is StopReason.HORIZON and s.steps == 40
    with pytest.raises(ValidationError):
        StopCondition().validate(0)
    with pytest.raises(ValidationError):
        StopCondition.hit_either(2, 5).validate(0)


def test_one_uniform_per_step():
    rng = RngStream(8)
    s, _, _ = run_until(WalkState.at(0), view_of(0.7, 0.6), StopCondition(max_steps=123), rng)
    assert rng.counter == s.steps == 123


@settings(max_examples=50, deadline=None)
@given(
    data=st.lists(rows, min_size=2, max_size=3),
    seed=st.integers(0, 2**32),
    n=st.integers(0, 300),
    start=st.integers(-5, 5),
)
def test_state_invariants(data, seed, n, start):
    w = [1.0 / len(data)] * len(data)
    w[-1] = 1.0 - sum(w[:-1])
    v = make_environment(EnvironmentSpec.iid_mixture(data, w, env_seed=seed))
    traj = []
    s, rec, _ = run_until(WalkState.at(start), v, StopCondition(max_steps=n), RngStream(seed), traj)
    assert abs(s.position - start) <= s.steps == n
    assert sum(s.visits.values()) == n + 1
    assert s.consumed_drift_pos >= 0 and s.consumed_drift_neg >= 0
    visited_total = sum(v.row(x).drift for x in s.visits)
    assert s.consumed_drift <= visited_total + 1e-12
    pos, neg = ledger_from_path(v, traj)
    assert pos == pytest.approx(s.consumed_drift_pos, abs=1e-12)
    assert neg == pytest.approx(s.consumed_drift_neg, abs=1e-12)
    levels = sorted(rec.passage_times)
    assert levels == list(range(start, max(traj) + 1))


@settings(max_examples=40, deadline=None)
@given(
    data=st.lists(rows, min_size=2, max_size=3),
    seed=st.integers(0, 2**32),
    master=st.integers(0, 2**32),
    start=st.integers(-3, 3),
    periodic=st.booleans(),
)
def test_kernel_trajectory_matches_reference(data, seed, master, start, periodic):
    if periodic:
        spec = EnvironmentSpec.periodic(data, env_seed=seed)
    else:
        w = [1.0 / len(data)] * len(data)
        w[-1] = 1.0 - sum(w[:-1])
        spec = EnvironmentSpec.iid_mixture(data, w, env_seed=seed)
    v = make_environment(spec).with_consumed({start: 1})
    n = 200
    traj = []
    run_until(WalkState.at(start), v, StopCondition(max_steps=n), RngStream(master, 0), traj)
    fast = K.trajectory(K.compile_view(v), np.uint64(seed), spec.resolved_phase(), np.uint64(stream_key(master, 0)), start, n)
    assert fast.tolist() == traj


def test_martingale_small_sample():
    # X_n - D_n is a martingale, so E[D_{T_k}] = k from 0
    v = view_of(0.9, 0.9)
    d = []
    for seed in range(400):
        s, _, _ = run_until(WalkState.at(0), v, StopCondition.hit_level(8), RngStream(seed))
        d.append(s.consumed_drift)
        assert s.martingale == pytest.approx(s.position - s.consumed_drift)
    d = np.array(d)
    assert abs(d.mean() - 8) < 4 * d.std(ddof=1) / np.sqrt(len(d))


@settings(max_examples=30, deadline=None)
@given(row=rows, seed=st.integers(0, 2**32))
def test_domination_coupling(row, seed):
    xs, ys = run_coupled_dominating(view_of(*row), 0, 300, RngStream(seed))
    assert np.all(ys <= xs)


def test_domination_trivial_cases():
    xs, ys = run_coupled_dominating(view_of(0.5), 0, 200, RngStream(4))
    assert np.array_equal(xs, ys)
    xs, _ = run_coupled_dominating(view_of(1.0), 0, 50, RngStream(4))
    assert np.array_equal(xs, np.arange(51))


def test_naive_coupling_overtakes_on_cylinder():
    us = (0.7, 0.9, 0.55, 0.2, 0.3, 0.55)
    x1, x2, over = run_coupled_naive(0.6, 0.8, 6, uniforms=us)
    assert over
    assert x1[6] > x2[6]
    assert not np.any(x1[:6] > x2[:6])


def test_naive_coupling_equal_strengths_identical():
    x1, x2, over = run_coupled_naive(0.7, 0.7, 100, rng=RngStream(5))
    assert np.array_equal(x1, x2) and not over


def test_naive_kernel_matches_reference():
    keys = np.array([stream_key(11, r) for r in range(300)], dtype=np.uint64)
    first = K.coupled_naive(0.6, 0.8, keys, 12)
    for r in range(300):
        x1, x2, over = run_coupled_naive(0.6, 0.8, 12, rng=RngStream(11, r))
        assert over == (first[r] > 0)
        if over:
            assert first[r] == int(np.argmax(x1 > x2))


def test_csv_dumps(tmp_path):
    _, rec, _ = run_until(WalkState.at(0), view_of(1, 1), StopCondition.hit_level(3), RngStream(1))
    rec.to_csv(tmp_path / "rec.csv")
    assert (tmp_path / "rec.csv").read_text().splitlines() == ["level,T_level", "0,0", "1,1", "2,2", "3,3"]
    dump_trajectory(tmp_path / "traj.csv", [0, 1, 0])
    assert (tmp_path / "traj.csv").read_text().splitlines() == ["step,position", "0,0", "1,1", "2,0"]
