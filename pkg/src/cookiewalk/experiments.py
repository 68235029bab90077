"""Scenario runners built from the env, walk, exact and estimate layers.

Verdicts produced from simulation (zero speed, return behaviour of a
leftover walk) are consistency checks only.  The authoritative verdicts come
from the closed-form criteria in :func:`classify` and
:func:`predicted_escape_prob`.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .rng import stream_key
from .env import (
    CookieRow,
    EnvironmentSpec,
    EnvironmentView,
    ValidationError,
    expected_delta,
    make_environment,
)
from .estimate import (
    Estimate,
    McConfig,
    fmt,
    mc_escape_prob,
    mc_speed,
    mean_estimate,
    plateau_test,
    run_horizon,
    u_partial_sums,
)
from .exact import (
    EventSpec,
    build_capped_chain,
    escape_prob_upper_bounds,
    path_sum_event_prob,
    solve_hitting_prob,
)

RECURRENT, TRANSIENT, DEGENERATE = "recurrent", "transient", "degenerate"

# stream ids of second walks in leftover runs, clear of replica streams
SECOND_WALK_STREAMS = 1 << 40


@dataclass
class Classification:
    expected_delta: float
    verdict: str
    degeneracy_flag: bool

    def to_dict(self) -> dict:
        return asdict(self)


def classify(spec: EnvironmentSpec) -> Classification:
    """Recurrent iff the expected site drift is at most 1.

    The one exception is the environment whose every row is a single
    strength-1 cookie: the walk then marches right deterministically.
    """
    if not spec.is_stationary:
        raise ValidationError("spec", f"{spec.kind} spec is not stationary; classification needs a random phase")
    d = expected_delta(spec)
    degenerate = all(r.trimmed().strengths == (1.0,) for r, _ in spec.support())
    if degenerate:
        verdict = DEGENERATE
    else:
        verdict = TRANSIENT if d > 1 else RECURRENT
    return Classification(d, verdict, degenerate)


def predicted_escape_prob(spec: EnvironmentSpec) -> float:
    """Closed-form never-return probability for rows of length at most two.

    Requires i.i.d. (or homogeneous) rows with no excitement after the second
    visit and a second cookie that is not a.s. trivial.
    """
    if spec.kind not in ("homogeneous", "iid_mixture"):
        raise ValidationError("spec", "the closed form needs i.i.d. rows")
    support = spec.support()
    if any(len(r.trimmed()) > 2 for r, _ in support):
        raise ValidationError("rows", "the closed form needs strength 1/2 from the third visit on")
    second = [(r.strength_at_index(1), r.strength_at_index(2), w) for r, w in support]
    denom = math.fsum(w * (2 * s2 - 1) * s1 for s1, s2, w in second)
    if denom == 0:
        raise ValidationError("rows", "the second cookie is a.s. 1/2; the closed form does not apply")
    e1 = math.fsum(w * s1 for s1, _, w in second)
    return e1 * max(expected_delta(spec) - 1.0, 0.0) / denom


def two_cookie(p: float) -> EnvironmentSpec:
    return EnvironmentSpec.homogeneous((p, p))


# ---------------------------------------------------------------------------
# phase scan


@dataclass
class PhasePoint:
    p: float
    predicted: float
    mc: Estimate
    exact_bound: float
    exact_K: int

    def to_dict(self) -> dict:
        return {"p": self.p, "predicted": self.predicted, "mc": self.mc.to_dict(), "exact_bound": self.exact_bound, "exact_K": self.exact_K}


PHASE_COLUMNS = ["p", "predicted", "mc", "mc_lo", "mc_hi", "exact_K"]


def phase_scan(p_grid: Sequence[float], cfg: McConfig, exact_K: int = 64) -> list[PhasePoint]:
    """Never-return probability for two cookies of strength p at every site.

    For each p: the closed form, the K-truncated Monte Carlo estimate at
    ``cfg.level`` and the exact reach-``exact_K``-before-return probability,
    which bounds both from above.
    """
    points = []
    for p in p_grid:
        if not 0.5 < p <= 1.0:
            raise ValidationError("p_grid", f"grid point {p} outside (1/2, 1]")
        spec = two_cookie(p)
        bound = escape_prob_upper_bounds(make_environment(spec), [exact_K]).values[0]
        points.append(PhasePoint(p, predicted_escape_prob(spec), mc_escape_prob(spec, cfg), bound, exact_K))
    return points


def phase_csv(points: Sequence[PhasePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PHASE_COLUMNS + ["exact_bound"])
    for pt in points:
        w.writerow([fmt(pt.p), fmt(pt.predicted), fmt(pt.mc.value), fmt(pt.mc.ci[0]), fmt(pt.mc.ci[1]), pt.exact_K, fmt(pt.exact_bound)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# zero speed


@dataclass
class ZeroSpeedReport:
    horizons: list[int]
    speeds: list[Estimate]
    u_partial: list[float]
    u_growth_final_fifth: float | None
    plateau: bool | None
    hypotheses_met: bool
    decreasing: bool
    verdict: str
    note: str = "consistency check, not a proof"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["speeds"] = [s.to_dict() for s in self.speeds]
        d.pop("u_partial")
        d["u_partial_last"] = self.u_partial[-1] if self.u_partial else None
        d["u_partial_len"] = len(self.u_partial)
        return d


def zero_speed_hypotheses(spec: EnvironmentSpec) -> bool:
    """Rows trivial from the third cookie on and two adjacent sites can both have w(.,1) < 1."""
    support = spec.support()
    if any(len(r.trimmed()) > 2 for r, _ in support):
        return False
    if spec.kind == "periodic":
        n = spec.period
        return any(spec.rows[k].strength_at_index(1) < 1 and spec.rows[(k + 1) % n].strength_at_index(1) < 1 for k in range(n))
    return any(r.strength_at_index(1) < 1 for r, _ in support)


def zero_speed_scan(spec: EnvironmentSpec, horizons: Sequence[int], cfg: McConfig) -> ZeroSpeedReport:
    """X_n/n at increasing horizons and the growth of the u partial sums.

    One set of replicas is run to the largest horizon and read at the
    smaller ones.  "consistent with v=0" needs the replica means to decrease
    strictly (or the last CI to contain 0) and the partial sums to keep
    growing over their final fifth.
    """
    horizons = sorted(int(h) for h in horizons)
    ok = zero_speed_hypotheses(spec)
    if not ok:
        warnings.warn("zero-speed hypotheses not met; running as an exploratory scan", stacklevel=2)
    run = run_horizon(spec, cfg, horizons[-1], checkpoints=horizons)
    speeds = []
    for k, h in enumerate(run.checkpoints):
        est = _mean(run.positions[:, k] / h, cfg)
        est.extra = {"horizon": int(h)}
        speeds.append(est)
    values = [s.value for s in speeds]
    decreasing = all(b < a for a, b in zip(values, values[1:]))
    try:
        u = u_partial_sums(run.gaps, run.maxlevel)
        plateau, growth, _ = plateau_test(u)
        u_list = [float(a) for a in u]
    except ValidationError:
        plateau, growth, u_list = None, None, []
    last = speeds[-1]
    if plateau:
        verdict = "positive speed"
    elif decreasing or last.ci[0] <= 0 <= last.ci[1]:
        verdict = "consistent with v=0"
    else:
        verdict = "inconclusive"
    return ZeroSpeedReport(horizons, speeds, u_list, growth, plateau, ok, decreasing, verdict)


def _mean(values, cfg):
    return mean_estimate(np.asarray(values, dtype=float), cfg.z)


# ---------------------------------------------------------------------------
# leftovers


@dataclass
class LeftoverReport:
    window: int
    horizon: int
    mean_leftover_drift: Estimate
    min_final_position: int
    leftover_classification: Classification
    second_walk_return: Estimate
    second_walk_horizon: int
    revisit_probability: list[float]
    note: str = "return behaviour of the second walk is a consistency check"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mean_leftover_drift"] = self.mean_leftover_drift.to_dict()
        d["second_walk_return"] = self.second_walk_return.to_dict()
        return d


def leftover_iterate(
    spec: EnvironmentSpec,
    cfg: McConfig,
    window: int = 50,
    horizon: int = 200_000,
    second_horizon: int = 20_000,
    second_replicas: int = 32,
) -> LeftoverReport:
    """Run a first walk, then a second walk on the cookies it left behind.

    The leftover rows of all replicas over ``[0, window)`` form an empirical
    i.i.d. law; its expected drift is the classification input for the
    second walk.  Each of the first ``second_replicas`` replicas then starts a
    second walk at 0 in its own leftover environment, and the report gives
    the fraction that comes back to 0 within ``second_horizon`` steps.

    ``revisit_probability`` brackets the exact probability, for the replica
    that ended closest to the window, of stepping back to ``window - 1``
    before getting as far again to the right, with everything in between
    eaten.
    """
    from . import _kernels as K
    from .estimate import _setup, proportion_estimate
    from .env import leftover_psi

    c = classify(spec)
    if c.verdict == RECURRENT:
        raise ValidationError("spec", "leftover iteration needs a transient first walk")
    run = run_horizon(spec, cfg, horizon, sites=(0, window), gap_cap=1)
    final = run.final
    if int(final.min()) < 2 * window:
        raise ValidationError("horizon", f"horizon too small: a first walk ended at {int(final.min())} < {2 * window}")
    drift_est = _mean(run.remaining.mean(axis=1), cfg)

    view, E, seeds, phases, keys = _setup(spec, cfg)
    counts: dict[tuple, int] = {}
    for r in range(cfg.replicas):
        rv = make_environment(spec.redraw(int(seeds[r])))
        for k in range(window):
            key = rv.base_row(k).residual(int(run.departures[r, k])).trimmed().strengths
            counts[key] = counts.get(key, 0) + 1
    total = sum(counts.values())
    law = EnvironmentSpec.iid_mixture(list(counts), [n / total for n in counts.values()])
    second = classify(law)

    returns = 0
    n2 = min(cfg.replicas, second_replicas)
    for r in range(n2):
        path = K.trajectory(E, seeds[r], phases[r], keys[r], 0, horizon)
        rv = leftover_psi(make_environment(spec.redraw(int(seeds[r]))), path)
        E2 = K.compile_view(rv)
        key2 = np.uint64(stream_key(cfg.master_seed, SECOND_WALK_STREAMS + r))
        path2 = K.trajectory(E2, seeds[r], phases[r], key2, 0, second_horizon)
        returns += bool(np.any(path2[1:] == 0))
    ret = proportion_estimate(returns, n2, cfg.z)

    revisit = _revisit_probability(spec, window, int(final.min()))
    return LeftoverReport(window, horizon, drift_est, int(final.min()), second, ret, second_horizon, revisit)


def _revisit_probability(spec: EnvironmentSpec, window: int, position: int, dmax: int = 512) -> list[float]:
    """Bracket for P[hit window-1 before 2*position-window+1] from ``position``.

    Sites between the window and ``position`` are taken as fully eaten.
    """
    if spec.kind != "homogeneous":
        return [float("nan"), float("nan")]
    from .exact import crossing_hitting_prob

    x, z = window - 1, 2 * position - window + 1
    eaten = {s: len(spec.rows[0]) for s in range(x, position)}
    res = crossing_hitting_prob(EnvironmentView(spec, eaten), position, x, z, dmax=dmax)
    return [1.0 - res.upper, 1.0 - res.lower]


# ---------------------------------------------------------------------------
# monotonicity suites


@dataclass
class SuiteReport:
    name: str
    cases: int
    violations: int
    max_excess: float
    counterexamples: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def random_rows(rng: np.random.Generator, n: int, max_len: int = 2) -> list[tuple[float, ...]]:
    out = []
    for _ in range(n):
        k = int(rng.integers(0, max_len + 1))
        out.append(tuple(float(v) for v in np.round(rng.uniform(0.5, 1.0, size=k), 6)))
    return out


def window_view(x: int, rows: Sequence[Sequence[float]]) -> EnvironmentView:
    """Explicit environment with ``rows`` on sites x+1, x+2, ... and empty rows elsewhere."""
    return make_environment(EnvironmentSpec.explicit_window({x + 1 + k: r for k, r in enumerate(rows)}))


def raise_cookies(rng: np.random.Generator, rows, prob: float = 0.5):
    """Dominating rows: each cookie is raised with probability ``prob`` to a uniform value in [current, 1]."""
    out = []
    for r in rows:
        new = [s if rng.random() >= prob else float(np.round(rng.uniform(s, 1.0), 6)) for s in r]
        out.append(tuple(max(a, b) for a, b in zip(new, r)))
    return out


def monotonicity_suite(n_cases: int = 200, max_width: int = 8, max_t: int = 14, seed: int = 0, tol: float = 1e-10) -> list[SuiteReport]:
    """Random checks of monotonicity in the starting point and in the environment.

    Every instance is evaluated with the exact path-sum oracle.  Returns one
    report per property.
    """
    rng = np.random.default_rng(seed)
    start_rep = SuiteReport("initial_point", n_cases, 0, 0.0)
    env_rep = SuiteReport("environment", n_cases, 0, 0.0)
    for _ in range(n_cases):
        width = int(rng.integers(1, max_width + 1))
        x = int(rng.integers(-3, 3))
        z = x + width + 1
        t = int(rng.integers(0, max_t + 1))
        rows = random_rows(rng, width)
        view = window_view(x, rows)
        y1, y2 = sorted(int(v) for v in rng.integers(x, z + 1, size=2))
        ev = EventSpec(z, x, t)
        a = path_sum_event_prob(view, y1, ev)
        b = path_sum_event_prob(view, y2, ev)
        _record(start_rep, a - b, tol, {"x": x, "z": z, "t": t, "y1": y1, "y2": y2, "rows": rows, "p1": a, "p2": b})

        y = int(rng.integers(x, z + 1))
        upper = raise_cookies(rng, rows)
        a = path_sum_event_prob(view, y, ev)
        b = path_sum_event_prob(window_view(x, upper), y, ev)
        _record(env_rep, a - b, tol, {"x": x, "z": z, "t": t, "y": y, "rows1": rows, "rows2": upper, "p1": a, "p2": b})
    return [start_rep, env_rep]


def lemma1_bound_suite(n_cases: int = 500, max_width: int = 8, seed: int = 0, tol: float = 1e-12) -> SuiteReport:
    """P_y[T_x < T_z] <= (z-y)/(z-x) on random environments via the capped chain."""
    rng = np.random.default_rng(seed)
    rep = SuiteReport("first_passage_bound", n_cases, 0, 0.0)
    for _ in range(n_cases):
        width = int(rng.integers(1, max_width + 1))
        x = int(rng.integers(-5, 5))
        z = x + width + 1
        y = int(rng.integers(x + 1, z))
        rows = random_rows(rng, width)
        chain = build_capped_chain(window_view(x, rows), x, z)
        left = solve_hitting_prob(chain, y, side="left")
        _record(rep, left - (z - y) / (z - x), tol, {"x": x, "y": y, "z": z, "rows": rows, "p_left": left})
    return rep


def oracle_agreement_suite(n_cases: int = 300, max_width: int = 5, seed: int = 0, tol: float = 1e-9) -> SuiteReport:
    """Path sums run long enough to be absorbed agree with the capped-chain solve."""
    rng = np.random.default_rng(seed)
    rep = SuiteReport("oracle_agreement", n_cases, 0, 0.0)
    for _ in range(n_cases):
        width = int(rng.integers(1, max_width + 1))
        x = int(rng.integers(-3, 3))
        z = x + width + 1
        y = int(rng.integers(x + 1, z))
        rows = random_rows(rng, width)
        view = window_view(x, rows)
        t = 64
        while True:
            ps, residual = path_sum_event_prob(view, y, EventSpec(z, x, t), cap=None, with_residual=True)
            if residual < 1e-12:
                break
            t *= 2
        h = solve_hitting_prob(build_capped_chain(view, x, z), y)
        _record(rep, abs(ps - h), tol, {"x": x, "y": y, "z": z, "rows": rows, "path_sum": ps, "chain": h, "t": t})
    return rep


def _record(rep: SuiteReport, excess: float, tol: float, instance: dict) -> None:
    rep.max_excess = max(rep.max_excess, float(excess))
    if excess > tol:
        rep.violations += 1
        rep.counterexamples.append(instance)


# ---------------------------------------------------------------------------
# return-probability and speed monotonicity


@dataclass
class MonotonicityCheck:
    levels: list[int]
    bounds: list[tuple[float, float]]
    bounds_ordered: bool
    speeds: list[tuple[Estimate, Estimate]] = field(default_factory=list)
    speeds_ordered: bool | None = None

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "bounds": self.bounds,
            "bounds_ordered": self.bounds_ordered,
            "speeds": [(a.to_dict(), b.to_dict()) for a, b in self.speeds],
            "speeds_ordered": self.speeds_ordered,
        }


def dominates(lower: EnvironmentSpec, upper: EnvironmentSpec) -> bool:
    if lower.kind != upper.kind or len(lower.rows) != len(upper.rows):
        return False
    if lower.kind == "iid_mixture" and lower.weights != upper.weights:
        return False
    if lower.kind == "periodic" and lower.phase != upper.phase:
        return False
    if lower.kind == "explicit_window":
        sites = set(lower._window_map) | set(upper._window_map)
        return lower.rows[0].dominated_by(upper.rows[0]) and all(
            lower.row_at(s).dominated_by(upper.row_at(s)) for s in sites
        )
    return all(a.dominated_by(b) for a, b in zip(lower.rows, upper.rows))


def return_monotonicity_check(
    pairs: Sequence[tuple[EnvironmentSpec, EnvironmentSpec]],
    levels: Sequence[int] = (64,),
    cfg: McConfig | None = None,
    horizon: int = 10_000,
) -> list[MonotonicityCheck]:
    """Exact escape bounds (and optionally speed estimates) for dominated pairs.

    With a ``cfg``, both speeds are estimated with the same seeds and are
    ordered when the lower one does not exceed the upper one beyond their
    joint confidence half-width.
    """
    out = []
    for lo, hi in pairs:
        if not dominates(lo, hi):
            raise ValidationError("pairs", "each pair must be pointwise dominated (lower, upper)")
        b_lo = escape_prob_upper_bounds(make_environment(lo), levels).values
        b_hi = escape_prob_upper_bounds(make_environment(hi), levels).values
        ordered = all(a <= b + 1e-12 for a, b in zip(b_lo, b_hi))
        chk = MonotonicityCheck(list(levels), list(zip(b_lo, b_hi)), ordered)
        if cfg is not None:
            s_lo = mc_speed(lo, cfg, horizon).estimate
            s_hi = mc_speed(hi, cfg, horizon).estimate
            slack = math.hypot(s_lo.ci[1] - s_lo.value, s_hi.ci[1] - s_hi.value)
            chk.speeds = [(s_lo, s_hi)]
            chk.speeds_ordered = s_lo.value <= s_hi.value + slack
        out.append(chk)
    return out


# ---------------------------------------------------------------------------
# couplings


@dataclass
class CouplingReport:
    runs: int
    horizon: int
    frequency: Estimate
    events: int
    exact: float | None = None
    cylinder: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["frequency"] = self.frequency.to_dict()
        return d


def naive_coupling_experiment(p1: float, p2: float, runs: int, seed: int, horizon: int = 12) -> CouplingReport:
    """How often the weaker once-excited walk gets strictly ahead under shared uniforms.

    ``exact`` is the same probability from cell enumeration and ``cylinder``
    the mass of the explicit six-step overtaking cylinder, a lower bound.
    """
    from . import _kernels as K
    from .estimate import proportion_estimate
    from .exact import cylinder_probability, naive_overtake_probability
    from .rng import replica_keys

    if not 0.5 < p1 <= p2 < 1:
        raise ValidationError("p1,p2", "need 1/2 < p1 <= p2 < 1")
    first = K.coupled_naive(p1, p2, replica_keys(seed, runs), horizon)
    n = int(np.sum(first > 0))
    exact = naive_overtake_probability(p1, p2, horizon) if horizon <= 14 else None
    return CouplingReport(runs, horizon, proportion_estimate(n, runs, 3.0), n, exact, cylinder_probability(p1, p2))


def domination_experiment(env, runs: int, seed: int, horizon: int = 200, start: int = 0) -> CouplingReport:
    """Count runs where the symmetric walk Y ever exceeds the excited walk X."""
    from . import _kernels as K
    from .estimate import as_view, proportion_estimate

    view = as_view(env)
    E = K.compile_view(view)
    seeds, phases = K.replica_env(view, seed, runs, True)
    from .rng import replica_keys

    gap = K.coupled_dominating(E, seeds, phases, replica_keys(seed, runs), start, horizon)
    n = int(np.sum(gap < 0))
    return CouplingReport(runs, horizon, proportion_estimate(n, runs, 3.0), n)


def predicted_curve(p_grid: Sequence[float]) -> list[float]:
    return [predicted_escape_prob(two_cookie(p)) for p in p_grid]


__all__ = [
    "Classification",
    "classify",
    "predicted_escape_prob",
    "PhasePoint",
    "phase_scan",
    "phase_csv",
    "ZeroSpeedReport",
    "zero_speed_scan",
    "LeftoverReport",
    "leftover_iterate",
    "SuiteReport",
    "monotonicity_suite",
    "lemma1_bound_suite",
    "oracle_agreement_suite",
    "return_monotonicity_check",
    "CouplingReport",
    "naive_coupling_experiment",
    "domination_experiment",
    "two_cookie",
    "predicted_curve",
    "EnvironmentSpec",
]
