import math

import numpy as np
import pytest

from cookiewalk.env import EnvironmentSpec, ValidationError, make_environment
from cookiewalk.estimate import (
    CSV_HEADER,
    AssumptionError,
    McConfig,
    append_csv,
    mc_consumed_drift,
    mc_consumed_drift_sites,
    mc_escape_prob,
    mc_martingale_check,
    mc_speed,
    mean_estimate,
    proportion_estimate,
    run_horizon,
    u_partial_sums,
)
from cookiewalk.exact import escape_prob_upper_bounds

H = EnvironmentSpec.homogeneous


def test_wilson_interval():
    e = proportion_estimate(0, 100, 1.96)
    assert e.value == 0 and e.ci[0] == 0 and 0 < e.ci[1] < 0.05
    e = proportion_estimate(50, 100, 1.96)
    assert e.ci[0] < 0.5 < e.ci[1]
    assert e.stderr == pytest.approx(0.05)


def test_mean_estimate():
    e = mean_estimate(np.array([1.0, 2.0, 3.0]), 2.0)
    assert e.value == 2.0 and e.stderr == pytest.approx(1 / math.sqrt(3))


def test_config_validation():
    with pytest.raises(ValidationError):
        McConfig(0, 1)
    with pytest.raises(ValidationError):
        McConfig(10, -1)
    with pytest.raises(ValidationError):
        McConfig(10, 1, ci_level=1.5)
    assert McConfig(10, 1).z == pytest.approx(1.959964, abs=1e-6)


def test_escape_deterministic():
    e = mc_escape_prob(H((1, 1)), McConfig(500, 3, level=50))
    assert e.value == 1.0 and e.stderr == 0.0


def test_escape_needs_level():
    with pytest.raises(ValidationError):
        mc_escape_prob(H((1, 1)), McConfig(10, 3))


@pytest.mark.parametrize("row,K", [((), 5), ((), 20), ((0.9, 0.9), 16), ((0.7, 0.6), 12)])
def test_escape_matches_exact_truncated(row, K):
    exact = escape_prob_upper_bounds(make_environment(H(row)), [K]).values[0]
    e = mc_escape_prob(H(row), McConfig(20_000, 17, level=K))
    assert abs(e.value - exact) < 4 * max(e.stderr, 1e-3)


def test_escape_censoring():
    e = mc_escape_prob(H(()), McConfig(2000, 5, level=1000, max_steps=20))
    assert e.censored_fraction > 0.05
    assert e.value <= 0.5


def test_escape_reproducible():
    cfg = McConfig(3000, 99, level=40)
    assert mc_escape_prob(H((0.8, 0.8)), cfg).to_json() == mc_escape_prob(H((0.8, 0.8)), cfg).to_json()
    other = mc_escape_prob(H((0.8, 0.8)), McConfig(3000, 100, level=40))
    assert other.value != mc_escape_prob(H((0.8, 0.8)), cfg).value


def test_martingale_deterministic():
    e = mc_martingale_check(H((1, 1)), McConfig(50, 1), level=10)
    assert e.value == 10.0 and e.stderr == 0.0


def test_martingale_from_left():
    e = mc_martingale_check(H((0.9, 0.9)), McConfig(2000, 4), level=0, start=-3)
    assert abs(e.value - 3) < 4 * e.stderr
    assert e.extra["target"] == 3


def test_martingale_requires_drift():
    with pytest.raises(AssumptionError):
        mc_martingale_check(H(()), McConfig(10, 1), level=3)
    with pytest.raises(ValidationError):
        mc_martingale_check(H((0.9,)), McConfig(10, 1), level=-1)


def test_consumed_drift_trivial():
    assert mc_consumed_drift(H(()), McConfig(50, 1), 0, 1000).value == 0.0
    e = mc_consumed_drift(H((1, 1)), McConfig(20, 1), 3, 100)
    assert e.value == 1.0 and e.censored_fraction == 0.0


def test_consumed_drift_recurrent_eats_everything():
    es = mc_consumed_drift_sites(H((0.6, 0.6)), McConfig(400, 2), [0, 1], 20_000)
    for e in es:
        assert abs(e.value - 0.4) < 0.03


def test_speed_deterministic():
    r = mc_speed(H((1,)), McConfig(10, 1), 500)
    assert r.estimate.value == 1.0
    assert r.u_hat == 1.0 and r.v_hat == 1.0 and r.plateau


def test_speed_periodic_positive():
    r = mc_speed(EnvironmentSpec.periodic([(1, 1), (0.6, 1)]), McConfig(100, 3), 20_000)
    assert r.estimate.ci[0] > 0.6
    assert r.plateau
    assert r.v_hat == pytest.approx(r.estimate.value, abs=0.02)


def test_horizon_run_shapes_and_checkpoints():
    run = run_horizon(H((0.9, 0.9)), McConfig(7, 1), 1000, checkpoints=[10, 100], sites=(0, 4))
    assert run.positions.shape == (7, 3)
    assert run.departures.shape == (7, 4)
    assert np.all(np.abs(run.positions[:, 0]) <= 10)
    assert np.allclose(run.eaten + run.remaining, 1.6)


def test_u_partial_sums_needs_levels():
    with pytest.raises(ValidationError, match="horizon too small"):
        u_partial_sums(np.zeros((2, 5), dtype=np.uint8), np.array([1, 5]))
    u = u_partial_sums(np.ones((2, 5), dtype=np.uint8), np.array([5, 5]))
    assert u.tolist() == [1, 2, 3, 4]


def test_quenched_vs_annealed_mixture():
    spec = EnvironmentSpec.iid_mixture([(1, 1), ()], [0.5, 0.5], env_seed=5)
    q = mc_escape_prob(spec, McConfig(2000, 1, level=20, annealed=False))
    a = mc_escape_prob(spec, McConfig(2000, 1, level=20))
    assert 0 <= q.value <= 1 and 0 <= a.value <= 1
    v = make_environment(spec)
    exact = escape_prob_upper_bounds(v, [20]).values[0]
    assert abs(q.value - exact) < 4 * max(q.stderr, 1e-3)


def test_append_csv(tmp_path):
    p = tmp_path / "out.csv"
    spec = H((0.9, 0.9))
    e = proportion_estimate(3, 10, 1.96)
    append_csv(p, "escape", spec, 7, e)
    append_csv(p, "escape", spec, 8, e)
    lines = p.read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 3 and lines[1].startswith("escape," + spec.spec_hash() + ",7,0.29999999999999999")
