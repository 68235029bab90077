import csv
import io

import numpy as np
import pytest

from cookiewalk.env import EnvironmentSpec, ValidationError
from cookiewalk.estimate import McConfig
from cookiewalk.experiments import (
    DEGENERATE,
    RECURRENT,
    TRANSIENT,
    classify,
    dominates,
    domination_experiment,
    leftover_iterate,
    lemma1_bound_suite,
    monotonicity_suite,
    naive_coupling_experiment,
    oracle_agreement_suite,
    phase_csv,
    phase_scan,
    predicted_curve,
    predicted_escape_prob,
    raise_cookies,
    return_monotonicity_check,
    two_cookie,
    zero_speed_hypotheses,
    zero_speed_scan,
)

H = EnvironmentSpec.homogeneous


@pytest.mark.parametrize(
    "p,delta,verdict",
    [(0.6, 0.4, RECURRENT), (0.7, 0.8, RECURRENT), (0.75, 1.0, RECURRENT), (0.76, 1.04, TRANSIENT), (0.8, 1.2, TRANSIENT)],
)
def test_classify_two_cookie(p, delta, verdict):
    c = classify(two_cookie(p))
    assert c.expected_delta == pytest.approx(delta, abs=1e-12)
    assert c.verdict == verdict and not c.degeneracy_flag


def test_classify_degenerate_and_mixtures():
    c = classify(H((1,)))
    assert c.verdict == DEGENERATE and c.degeneracy_flag
    assert classify(H((1, 0.5, 0.5))).verdict == DEGENERATE
    assert classify(H((1, 1))).verdict == TRANSIENT
    assert classify(EnvironmentSpec.iid_mixture([(1, 1), ()], [0.5, 0.5])).verdict == RECURRENT
    assert classify(EnvironmentSpec.iid_mixture([(1, 1, 1), ()], [0.5, 0.5])).verdict == TRANSIENT
    assert classify(EnvironmentSpec.periodic([(1, 1), (0.6, 1)])).verdict == TRANSIENT


def test_classify_rejects_fixed_phase():
    with pytest.raises(ValidationError, match="not stationary"):
        classify(EnvironmentSpec.periodic([(1, 1), (0.6, 1)], phase=0))


@pytest.mark.parametrize("p,expected", [(0.9, 0.75), (0.8, 1 / 3), (0.75, 0.0), (0.6, 0.0), (1.0, 1.0)])
def test_predicted_escape(p, expected):
    assert predicted_escape_prob(two_cookie(p)) == pytest.approx(expected, abs=1e-12)


def test_predicted_escape_general_form():
    # independent evaluation of E[w1](E[delta]-1)+ / E[(2 w2 - 1) w1] on a mixture
    rows, w = [(0.9, 0.8), (1.0, 0.7)], [0.4, 0.6]
    spec = EnvironmentSpec.iid_mixture(rows, w)
    e1 = 0.4 * 0.9 + 0.6 * 1.0
    ed = 0.4 * (0.8 + 0.6) + 0.6 * (1.0 + 0.4)
    den = 0.4 * 0.6 * 0.9 + 0.6 * 0.4 * 1.0
    assert predicted_escape_prob(spec) == pytest.approx(e1 * (ed - 1) / den, rel=1e-12)
    with pytest.raises(ValidationError):
        predicted_escape_prob(H((0.9, 0.9, 0.9)))
    with pytest.raises(ValidationError):
        predicted_escape_prob(H((0.9,)))


def test_predicted_zero_iff_recurrent():
    for p in np.linspace(0.55, 1.0, 19):
        spec = two_cookie(float(p))
        assert (predicted_escape_prob(spec) == 0) == (classify(spec).verdict == RECURRENT)


def test_phase_curve_nondecreasing():
    vals = predicted_curve(np.linspace(0.55, 0.99, 45).tolist())
    assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))


def test_phase_scan_small():
    pts = phase_scan([0.8, 0.9], McConfig(4000, 7, level=64), exact_K=64)
    for pt in pts:
        assert abs(pt.mc.value - pt.exact_bound) < 4 * pt.mc.stderr + 1e-3
    rows = list(csv.reader(io.StringIO(phase_csv(pts))))
    assert rows[0][:6] == ["p", "predicted", "mc", "mc_lo", "mc_hi", "exact_K"]
    assert len(rows) == 3
    with pytest.raises(ValidationError):
        phase_scan([0.4], McConfig(10, 1, level=5))


def test_zero_speed_hypotheses():
    assert zero_speed_hypotheses(two_cookie(0.9))
    assert not zero_speed_hypotheses(H((0.9, 0.9, 0.9)))
    assert not zero_speed_hypotheses(EnvironmentSpec.periodic([(1, 1), (0.6, 1)]))
    assert not zero_speed_hypotheses(H((1, 1)))


@pytest.mark.filterwarnings("ignore:zero-speed hypotheses")
def test_zero_speed_periodic_positive():
    r = zero_speed_scan(EnvironmentSpec.periodic([(1, 1), (0.6, 1)]), [1000, 10_000], McConfig(50, 3))
    assert r.verdict == "positive speed" and r.plateau
    assert "consistency check" in r.note


def test_zero_speed_symmetric():
    r = zero_speed_scan(H(()), [1000, 10_000], McConfig(200, 3))
    assert all(abs(s.value) < 0.05 for s in r.speeds)
    assert r.verdict == "consistent with v=0"


def test_zero_speed_exploratory_warns():
    with pytest.warns(UserWarning, match="hypotheses"):
        zero_speed_scan(H((0.8, 0.8, 0.8)), [500, 1000], McConfig(10, 1))


def test_leftover_degenerate_exact():
    r = leftover_iterate(H((1, 1)), McConfig(10, 1), window=20, horizon=500, second_horizon=100)
    assert r.mean_leftover_drift.value == 1.0 and r.mean_leftover_drift.stderr == 0.0
    assert r.leftover_classification.verdict == DEGENERATE
    assert r.second_walk_return.value == 0.0


def test_leftover_errors():
    with pytest.raises(ValidationError, match="horizon too small"):
        leftover_iterate(two_cookie(0.9), McConfig(10, 1), window=50, horizon=50)
    with pytest.raises(ValidationError):
        leftover_iterate(two_cookie(0.7), McConfig(10, 1))


def test_leftover_two_cookie_small():
    r = leftover_iterate(two_cookie(0.9), McConfig(60, 5), window=20, horizon=40_000, second_horizon=2000, second_replicas=4)
    assert abs(r.mean_leftover_drift.value - 0.6) < 0.1
    assert r.leftover_classification.verdict == RECURRENT
    lo, hi = r.revisit_probability
    assert 0 <= lo <= hi <= 1


def test_monotonicity_suite_small():
    reps = monotonicity_suite(60, seed=3)
    assert [r.name for r in reps] == ["initial_point", "environment"]
    assert all(r.passed and r.cases == 60 for r in reps)


def test_first_passage_and_oracle_suites_small():
    assert lemma1_bound_suite(80, seed=2).passed
    assert oracle_agreement_suite(40, seed=2).passed


def test_raise_cookies_dominates():
    rng = np.random.default_rng(0)
    rows = [(0.6, 0.7), (), (0.5,)]
    up = raise_cookies(rng, rows)
    assert all(a <= b for r, u in zip(rows, up) for a, b in zip(r, u))
    assert [len(u) for u in up] == [len(r) for r in rows]


def test_return_monotonicity():
    lo, hi = two_cookie(0.8), two_cookie(0.9)
    chk = return_monotonicity_check([(lo, hi)])[0]
    assert chk.bounds_ordered and chk.bounds[0][0] < chk.bounds[0][1]
    same = return_monotonicity_check([(lo, lo)])[0]
    assert same.bounds[0][0] == same.bounds[0][1]
    with pytest.raises(ValidationError):
        return_monotonicity_check([(hi, lo)])
    assert dominates(lo, hi) and not dominates(hi, lo)


def test_return_monotonicity_with_speeds():
    lo = EnvironmentSpec.periodic([(1, 1), (0.6, 1)])
    hi = EnvironmentSpec.periodic([(1, 1), (0.8, 1)])
    chk = return_monotonicity_check([(lo, hi)], levels=(16,), cfg=McConfig(40, 2), horizon=5000)[0]
    assert chk.speeds_ordered


def test_coupling_experiments_small():
    r = naive_coupling_experiment(0.6, 0.8, 200_000, 1)
    assert r.events > 0
    assert abs(r.frequency.value - r.exact) < 4 * r.frequency.stderr
    assert r.cylinder == pytest.approx(1e-4)
    d = domination_experiment(two_cookie(0.9), 2000, 1, horizon=100)
    assert d.events == 0
