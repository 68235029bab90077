"""History-dependent walk kernel in plain Python.

Only the sufficient statistic of the history is kept: the position, the
per-site visit counts and the drift eaten so far.  This module is the
readable reference; :mod:`cookiewalk._kernels` runs the same dynamics for
replica-heavy estimators.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .env import EnvironmentView, ValidationError
from .rng import RngStream


@dataclass
class WalkState:
    position: int
    start: int
    steps: int = 0
    visits: dict[int, int] = field(default_factory=dict)
    consumed_drift_pos: float = 0.0
    consumed_drift_neg: float = 0.0

    @classmethod
    def at(cls, start: int) -> "WalkState":
        return cls(position=start, start=start, visits={start: 1})

    @property
    def consumed_drift(self) -> float:
        return self.consumed_drift_pos + self.consumed_drift_neg

    @property
    def martingale(self) -> float:
        """X_n - D_n."""
        return self.position - self.consumed_drift

    def copy(self) -> "WalkState":
        return WalkState(
            self.position,
            self.start,
            self.steps,
            dict(self.visits),
            self.consumed_drift_pos,
            self.consumed_drift_neg,
        )


@dataclass
class PassageRecord:
    """First-passage times of the levels above the start, in order.

    ``passage_times[k]`` is T_k for every level ``k >= start`` reached; levels
    never reached are absent.
    """

    passage_times: dict[int, int] = field(default_factory=dict)

    @property
    def gaps(self) -> list[int]:
        times = [self.passage_times[k] for k in sorted(self.passage_times)]
        return [b - a for a, b in zip(times, times[1:])]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "T_level"])
            for k in sorted(self.passage_times):
                w.writerow([k, self.passage_times[k]])


class StopReason(enum.Enum):
    LEVEL = "level"
    LEFT = "left"
    RIGHT = "right"
    HORIZON = "horizon"
    TRUNCATED = "truncated"


@dataclass(frozen=True)
class StopCondition:
    """When ``run_until`` stops.

    ``level`` stops at the first hit of that level; ``interval=(x, z)`` stops
    on hitting either end.  ``max_steps`` is a horizon on its own and a
    truncation budget otherwise.
    """

    max_steps: int | None = None
    level: int | None = None
    interval: tuple[int, int] | None = None

    @classmethod
    def hit_level(cls, k: int, max_steps: int | None = None) -> "StopCondition":
        return cls(max_steps=max_steps, level=k)

    @classmethod
    def hit_either(cls, x: int, z: int, max_steps: int | None = None) -> "StopCondition":
        return cls(max_steps=max_steps, interval=(x, z))

    def validate(self, start: int) -> None:
        if self.level is not None and self.interval is not None:
            raise ValidationError("stop", "give either a level or an interval, not both")
        if self.level is None and self.interval is None and self.max_steps is None:
            raise ValidationError("stop", "an open-ended run needs max_steps")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValidationError("max_steps", "must be nonnegative")
        if self.interval is not None:
            x, z = self.interval
            if not x < start < z:
                raise ValidationError("interval", f"need x < start < z, got {x} < {start} < {z}")


def step(state: WalkState, view: EnvironmentView, u: float) -> WalkState:
    """Advance ``state`` by one step using the uniform ``u`` (in place).

    The walker jumps right iff ``u`` is below the strength of the cookie for
    the current visit; a non-trivial cookie adds its drift to the ledger of
    the site's sign.  Returns ``state`` for chaining.
    """
    if not 0.0 <= u < 1.0:
        raise ValidationError("u", f"uniform must lie in [0, 1), got {u}")
    x = state.position
    j = state.visits[x]
    s = view.strength(x, j)
    if s != 0.5:
        if x >= 0:
            state.consumed_drift_pos += 2 * s - 1
        else:
            state.consumed_drift_neg += 2 * s - 1
    x = x + 1 if u < s else x - 1
    state.position = x
    state.steps += 1
    state.visits[x] = state.visits.get(x, 0) + 1
    return state


def run_until(
    state: WalkState,
    view: EnvironmentView,
    stop: StopCondition,
    rng: RngStream,
    trajectory: list | None = None,
):
    """Step until ``stop`` fires.

    Returns ``(state, record, reason)``.  Exactly one uniform is drawn per
    step.  Pass a list as ``trajectory`` to collect positions.
    """
    stop.validate(state.start)
    record = PassageRecord()
    top = state.position
    if top >= state.start:
        record.passage_times[top] = state.steps
    if trajectory is not None and not trajectory:
        trajectory.append(state.position)
    budget = None if stop.max_steps is None else state.steps + stop.max_steps

    def fired():
        x = state.position
        if stop.level is not None and x == stop.level:
            return StopReason.LEVEL
        if stop.interval is not None:
            if x <= stop.interval[0]:
                return StopReason.LEFT
            if x >= stop.interval[1]:
                return StopReason.RIGHT
        return None

    reason = fired()
    while reason is None:
        if budget is not None and state.steps >= budget:
            plain_horizon = stop.level is None and stop.interval is None
            reason = StopReason.HORIZON if plain_horizon else StopReason.TRUNCATED
            break
        step(state, view, rng.uniform())
        if trajectory is not None:
            trajectory.append(state.position)
        if state.position > top:
            top = state.position
            record.passage_times[top] = state.steps
        reason = fired()
    return state, record, reason


def ledger_from_path(view: EnvironmentView, path: Sequence[int]) -> tuple[float, float]:
    """Recompute (D^+, D^-) from a trajectory, independently of ``step``."""
    departures: dict[int, int] = {}
    for x in path[:-1]:
        departures[x] = departures.get(x, 0) + 1
    pos = neg = 0.0
    for x, k in departures.items():
        d = sum(2 * s - 1 for s in view.row(x).strengths[:k])
        if x >= 0:
            pos += d
        else:
            neg += d
    return pos, neg


def run_coupled_dominating(view: EnvironmentView, start: int, horizon: int, rng: RngStream):
    """Drive the excited walk X and a symmetric walk Y with shared uniforms.

    X jumps right iff u < current cookie strength, Y iff u < 1/2, so
    Y_n <= X_n for every n.
    """
    if horizon < 0:
        raise ValidationError("horizon", "must be nonnegative")
    state = WalkState.at(start)
    xs = np.empty(horizon + 1, dtype=np.int64)
    ys = np.empty(horizon + 1, dtype=np.int64)
    xs[0] = ys[0] = start
    y = start
    for n in range(1, horizon + 1):
        u = rng.uniform()
        step(state, view, u)
        y += 1 if u < 0.5 else -1
        xs[n] = state.position
        ys[n] = y
    return xs, ys


def run_coupled_naive(p1: float, p2: float, horizon: int, rng: RngStream | None = None, uniforms=None):
    """The two once-excited walks with first-visit strengths ``p1 <= p2``.

    Either an ``rng`` or an explicit sequence of ``uniforms`` drives both
    walks.  Returns ``(X1, X2, overtook)`` where ``overtook`` is whether the
    weaker walk was ever strictly ahead.
    """
    if not (0.5 < p1 <= p2 < 1):
        raise ValidationError("p1,p2", f"need 1/2 < p1 <= p2 < 1, got p1={p1}, p2={p2}")
    if uniforms is not None:
        us = list(uniforms)[:horizon]
        if len(us) < horizon:
            raise ValidationError("uniforms", f"need {horizon} uniforms, got {len(us)}")
    elif rng is not None:
        us = [rng.uniform() for _ in range(horizon)]
    else:
        raise ValidationError("rng", "either rng or uniforms is required")
    walks = []
    for p in (p1, p2):
        seen = set()
        x, path = 0, [0]
        for u in us:
            s = 0.5 if x in seen else p
            seen.add(x)
            x += 1 if u < s else -1
            path.append(x)
        walks.append(np.array(path, dtype=np.int64))
    x1, x2 = walks
    return x1, x2, bool(np.any(x1 > x2))


def dump_trajectory(path, positions: Sequence[int]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "position"])
        for n, x in enumerate(positions):
            w.writerow([n, int(x)])
