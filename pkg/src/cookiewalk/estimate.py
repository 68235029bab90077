"""Monte Carlo estimators with confidence intervals.

All estimators take an :class:`EnvironmentSpec` (or an already transformed
:class:`EnvironmentView`) and an :class:`McConfig`.  Replica ``r`` always uses
stream ``r`` of ``master_seed`` and, for annealed runs, its own environment
draw, so results are bit-reproducible.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm

from . import _kernels as K
from .env import EnvironmentSpec, EnvironmentView, ValidationError, expected_first_drift, make_environment
from .rng import replica_keys

DEFAULT_MAX_STEPS = 10**12


class AssumptionError(ValidationError):
    """The environment does not satisfy a hypothesis an estimator relies on."""


@dataclass(frozen=True)
class McConfig:
    replicas: int
    master_seed: int
    level: int | None = None
    max_steps: int | None = None
    ci_level: float = 0.95
    annealed: bool = True

    def __post_init__(self):
        if self.replicas < 1:
            raise ValidationError("replicas", "must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ValidationError("master_seed", "must be an unsigned 64-bit integer")
        if not 0 < self.ci_level < 1:
            raise ValidationError("ci_level", "must lie in (0, 1)")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValidationError("max_steps", "must be >= 1")

    @property
    def z(self) -> float:
        return float(norm.ppf(0.5 + self.ci_level / 2))


@dataclass
class Estimate:
    value: float
    stderr: float
    ci: tuple[float, float]
    replicas_used: int
    censored_fraction: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "value": self.value,
            "stderr": self.stderr,
            "ci": list(self.ci),
            "replicas": self.replicas_used,
            "censored": self.censored_fraction,
        }
        if self.extra:
            d["extra"] = self.extra
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def proportion_estimate(successes: int, n: int, z: float, censored: float = 0.0) -> Estimate:
    """Sample proportion with a Wilson score interval."""
    p = successes / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo, hi = min(p, center - half), max(p, center + half)
    return Estimate(p, math.sqrt(p * (1 - p) / n), (max(0.0, lo), min(1.0, hi)), n, censored)


def mean_estimate(values: np.ndarray, z: float, censored: float = 0.0) -> Estimate:
    n = len(values)
    m = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return Estimate(m, se, (m - z * se, m + z * se), n, censored)


def as_view(env) -> EnvironmentView:
    if isinstance(env, EnvironmentView):
        return env
    if isinstance(env, EnvironmentSpec):
        return make_environment(env)
    raise ValidationError("spec", f"expected EnvironmentSpec or EnvironmentView, got {type(env).__name__}")


def _setup(env, cfg: McConfig):
    view = as_view(env)
    E = K.compile_view(view)
    seeds, phases = K.replica_env(view, cfg.master_seed, cfg.replicas, cfg.annealed)
    keys = replica_keys(cfg.master_seed, cfg.replicas)
    return view, E, seeds, phases, keys


# ---------------------------------------------------------------------------


def mc_escape_prob(env, cfg: McConfig) -> Estimate:
    """Probability of reaching ``cfg.level`` before returning to 0.

    The K-truncated event contains the never-return event, so the estimate
    is biased upward; the exact bounds of
    :func:`cookiewalk.exact.escape_prob_upper_bounds` quantify that bias.
    Replicas stopped by ``max_steps`` count as failures and are reported in
    ``censored_fraction``.
    """
    if cfg.level is None or cfg.level < 1:
        raise ValidationError("level", "escape estimation needs a truncation level K >= 1")
    view, E, seeds, phases, keys = _setup(env, cfg)
    outcome, steps = K.escape(E, seeds, phases, keys, cfg.level, cfg.max_steps or DEFAULT_MAX_STEPS)
    est = proportion_estimate(int(np.sum(outcome == 1)), cfg.replicas, cfg.z, float(np.mean(outcome < 0)))
    est.extra = {"level": cfg.level, "mean_steps": float(np.mean(steps))}
    return est


def check_positive_first_drift(env) -> None:
    """Sufficient surrogate for the drift condition to the left of the start.

    The average first-cookie drift far to the left has to be positive; for
    stationary specs this is the expected first-cookie drift, for explicit
    windows it is the first-cookie drift of the default row.
    """
    view = as_view(env)
    spec = view.spec
    if spec.kind == "explicit_window":
        g = 2 * spec.rows[0].strength_at_index(1) - 1
    elif spec.kind == "periodic" and spec.phase != "random":
        g = float(np.mean([2 * r.strength_at_index(1) - 1 for r in spec.rows]))
    else:
        g = expected_first_drift(spec)
    if g <= 0:
        raise AssumptionError(
            "spec",
            "first-cookie drift to the left of the start averages to 0; "
            "E[D_{T_k}] = k - x needs a positive average (drift-positivity assumption)",
        )


def mc_martingale_check(env, cfg: McConfig, level: int, start: int = 0) -> Estimate:
    """Estimate E_x[D_{T_k}], whose exact value is ``level - start``."""
    if level < start:
        raise ValidationError("level", f"need level >= start, got {level} < {start}")
    check_positive_first_drift(env)
    view, E, seeds, phases, keys = _setup(env, cfg)
    dpos, dneg, steps, reached = K.to_level(
        E, seeds, phases, keys, start, level, cfg.max_steps or DEFAULT_MAX_STEPS
    )
    d = dpos + dneg
    est = mean_estimate(d, cfg.z, float(np.mean(~reached)))
    target = level - start
    est.extra = {
        "target": target,
        "relative_deviation": (est.value - target) / target if target else est.value,
        "mean_positive": float(np.mean(dpos)),
        "mean_negative": float(np.mean(dneg)),
    }
    return est


@dataclass
class HorizonRun:
    """Raw per-replica output of a fixed-horizon run (see ``_kernels.horizon``)."""

    horizon: int
    checkpoints: np.ndarray
    positions: np.ndarray
    site_lo: int
    departures: np.ndarray
    eaten: np.ndarray
    remaining: np.ndarray
    consumed: np.ndarray
    maxlevel: np.ndarray
    gaps: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.positions[:, -1]


def run_horizon(
    env, cfg: McConfig, horizon: int, start: int = 0, checkpoints=(), sites=(0, 0), gap_cap: int | None = None
) -> HorizonRun:
    if horizon < 1:
        raise ValidationError("horizon", "must be >= 1")
    cps = sorted({int(c) for c in checkpoints if 1 <= c <= horizon} | {horizon})
    lo, hi = sites
    cap = min(horizon, 1 << 18) + 1 if gap_cap is None else gap_cap
    view, E, seeds, phases, keys = _setup(env, cfg)
    out = K.horizon(E, seeds, phases, keys, start, horizon, np.array(cps, dtype=np.int64), lo, hi, cap)
    pos, dep, eaten, remaining, dtot, maxlevel, gaps = out
    return HorizonRun(horizon, np.array(cps), pos, lo, dep, eaten, remaining, dtot, maxlevel, gaps)


def mc_consumed_drift(env, cfg: McConfig, site: int, horizon: int, margin: int | None = None) -> Estimate:
    """Estimate E_0[D_inf^x] by the drift eaten at ``site`` up to ``horizon``."""
    return mc_consumed_drift_sites(env, cfg, [site], horizon, margin)[0]


def mc_consumed_drift_sites(env, cfg: McConfig, sites, horizon: int, margin: int | None = None) -> list[Estimate]:
    """Consumed drift at several sites from one set of replicas.

    D_n^x only grows with n, so each value is a lower estimate of D_inf^x.  A
    replica counts as censored at x when x still holds uneaten drift and the
    walker is fewer than ``margin`` sites (default sqrt(horizon)) to its right.
    """
    sites = [int(s) for s in sites]
    if any(s < 0 for s in sites):
        raise ValidationError("site", "sites must be >= 0")
    margin = int(math.isqrt(horizon)) if margin is None else margin
    lo, hi = min(sites), max(sites) + 1
    run = run_horizon(env, cfg, horizon, sites=(lo, hi), gap_cap=1)
    out = []
    for s in sites:
        k = s - lo
        open_ = (run.remaining[:, k] > 0) & (run.final - s < margin)
        est = mean_estimate(run.eaten[:, k], cfg.z, float(np.mean(open_)))
        est.extra = {"site": s, "horizon": horizon, "margin": margin, "mean_remaining": float(np.mean(run.remaining[:, k]))}
        out.append(est)
    return out


@dataclass
class SpeedResult:
    estimate: Estimate
    u_partial: list[float]
    u_hat: float
    v_hat: float
    plateau: bool
    growth_final_fifth: float
    stability_window: tuple[int, int]
    verdict: str

    def to_dict(self) -> dict:
        d = asdict(self)
        d["estimate"] = self.estimate.to_dict()
        return d


def u_partial_sums(gaps: np.ndarray, maxlevel: np.ndarray) -> np.ndarray:
    """Partial sums of P[T_{j+1} - T_j >= j] for j = 1..J.

    J is the largest j with level j+1 reached by every replica.
    """
    J = min(int(np.min(maxlevel)) - 1, gaps.shape[1] - 1)
    if J < 1:
        raise ValidationError("horizon", "horizon too small: some replica never reached level 2")
    p = gaps[:, 1 : J + 1].mean(axis=0)
    return np.cumsum(p)


def plateau_test(u: np.ndarray, tail: float = 0.2, rel: float = 0.01) -> tuple[bool, float, tuple[int, int]]:
    """Relative increase of the partial sums over their final ``tail`` fraction."""
    J = len(u)
    i0 = max(1, int(math.ceil((1 - tail) * J)))
    growth = float((u[-1] - u[i0 - 1]) / u[i0 - 1])
    return growth < rel, growth, (i0, J)


def mc_speed(env, cfg: McConfig, horizon: int) -> SpeedResult:
    """X_n/n over replicas plus the u-series of inter-level passage gaps.

    When the final fifth of the partial sums grows by less than 1 % the last
    partial sum is taken as u and v = 1/u; otherwise u is reported as
    diverging and v = 0.
    """
    run = run_horizon(env, cfg, horizon)
    est = mean_estimate(run.final / horizon, cfg.z)
    u = u_partial_sums(run.gaps, run.maxlevel)
    plateau, growth, window = plateau_test(u)
    u_hat = float(u[-1])
    v_hat = 1.0 / u_hat if plateau else 0.0
    est.extra = {"horizon": horizon}
    return SpeedResult(
        est, [float(a) for a in u], u_hat, v_hat, plateau, growth, window, "u stable" if plateau else "u diverging"
    )


# ---------------------------------------------------------------------------


CSV_HEADER = ["estimator", "spec_hash", "seed", "value", "lo", "hi", "censored"]


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def append_csv(path, estimator: str, spec: EnvironmentSpec, seed: int, est: Estimate) -> None:
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(CSV_HEADER)
        w.writerow(
            [estimator, spec.spec_hash(), seed, fmt(est.value), fmt(est.ci[0]), fmt(est.ci[1]), fmt(est.censored_fraction)]
        )
