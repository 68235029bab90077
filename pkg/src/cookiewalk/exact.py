"""Exact oracles for the quenched walk on a finite interval.

Three independent routes are provided:

* :func:`path_sum_event_prob` pushes probability mass forward in time over
  (position, eaten-count) states and sums the mass absorbed at the target.
* :func:`build_capped_chain` enumerates the absorbing chain over
  (position, remaining cookies per interior site) and the ``solve_*``
  functions solve its linear systems, in floating point or in exact rationals.
* :func:`crossing_hitting_prob` follows the number of left crossings of each
  edge from the target back to the barrier.  Its state space grows with the
  crossing counts rather than with the product of row lengths, so it reaches
  intervals far beyond the capped chain; truncating the counts yields a
  two-sided bracket.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numba as nb
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .env import EnvironmentSpec, EnvironmentView, ValidationError, leftover_psi, make_environment

DEFAULT_PATH_CAP = 24
DEFAULT_BUDGET = 5_000_000
# above this many states the crossing route is much faster than a sparse LU
AUTO_CHAIN_STATES = 20_000
EXACT_STATE_LIMIT = 600


class BudgetExceeded(RuntimeError):
    def __init__(self, required: int, budget: int):
        self.required = required
        self.budget = budget
        super().__init__(f"capped chain needs {required} states, budget is {budget}")


class SolverError(RuntimeError):
    def __init__(self, residual: float, message: str = "linear solve did not converge"):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


def _frac(s: float) -> Fraction:
    # shortest decimal repr, so 0.9 becomes 9/10 rather than the binary value
    return Fraction(repr(float(s)))


# ---------------------------------------------------------------------------
# path sums


@dataclass(frozen=True)
class EventSpec:
    """The event {T_target <= T_barrier and T_target <= horizon}.

    ``barrier=None`` means minus infinity and ``horizon=None`` means no time
    limit.
    """

    target: int
    barrier: int | None
    horizon: int | None

    def __post_init__(self):
        if self.barrier is not None and not self.barrier < self.target:
            raise ValidationError("barrier", "need barrier < target")
        if self.horizon is not None and self.horizon < 0:
            raise ValidationError("horizon", "must be nonnegative")


def path_sum_event_prob(
    view: EnvironmentView,
    y: int,
    event: EventSpec,
    cap: int | None = DEFAULT_PATH_CAP,
    exact: bool = False,
    with_residual: bool = False,
):
    """P_y[T_z <= T_x ^ t] as an exact sum over paths.

    Paths that share position and per-site eaten counts are merged, which is
    what keeps the sum tractable; nothing is sampled.  ``with_residual``
    also returns the mass still inside the interval at time ``t``.
    """
    x, z, t = event.barrier, event.target, event.horizon
    if t is None:
        raise ValidationError("horizon", "path sums need a finite horizon; use solve_hitting_prob")
    if cap is not None and t > cap:
        raise ValidationError(
            "horizon",
            f"horizon {t} exceeds the path-sum cap {cap}; use build_capped_chain + solve_hitting_prob",
        )
    if (x is not None and y < x) or y > z:
        raise ValidationError("y", f"need x <= y <= z, got y={y}")
    one = Fraction(1) if exact else 1.0
    half = Fraction(1, 2) if exact else 0.5
    zero = 0 * one
    if y == z:
        return (one, zero) if with_residual else one
    if x is not None and y == x:
        return (zero, zero) if with_residual else zero
    lo = x + 1 if x is not None else y - t
    hi = z - 1
    rows = []
    for s in range(lo, hi + 1):
        strengths = view.row(s).strengths
        rows.append(tuple(_frac(v) for v in strengths) if exact else strengths)
    frontier: dict = {(y, (0,) * (hi - lo + 1)): one}
    total = zero
    for _ in range(t):
        nxt: dict = defaultdict(lambda: zero)
        for (p, cnt), pr in frontier.items():
            k = p - lo
            row = rows[k]
            e = cnt[k]
            if e < len(row):
                s = row[e]
                cnt = cnt[:k] + (e + 1,) + cnt[k + 1 :]
            else:
                s = half
            if p + 1 == z:
                total += pr * s
            else:
                nxt[(p + 1, cnt)] += pr * s
            if p - 1 != x and p - 1 >= lo:
                nxt[(p - 1, cnt)] += pr * (1 - s)
        frontier = nxt
    if with_residual:
        return total, sum(frontier.values(), zero)
    return total


# ---------------------------------------------------------------------------
# capped chain


@dataclass
class CappedChain:
    """Absorbing chain on (position, remaining cookies) over ``(x, z)``.

    States are ordered lexicographically by position and then by the vector
    of remaining counts (first interior site most significant).  Transition
    targets ``-1`` and ``-2`` denote absorption at ``z`` and ``x``.
    """

    x: int
    z: int
    rows: tuple[tuple[float, ...], ...]
    sizes: np.ndarray
    radices: np.ndarray
    p_right: np.ndarray
    right: np.ndarray
    left: np.ndarray

    ABSORB_RIGHT = -1
    ABSORB_LEFT = -2

    @property
    def width(self) -> int:
        return self.z - self.x - 1

    @property
    def codes(self) -> int:
        return int(np.prod(self.sizes))

    @property
    def n_states(self) -> int:
        return self.width * self.codes

    def state_index(self, p: int, remaining: Sequence[int]) -> int:
        if not self.x < p < self.z:
            raise ValidationError("p", f"{p} is not interior to ({self.x}, {self.z})")
        rem = np.asarray(remaining)
        if rem.shape != self.sizes.shape or np.any(rem < 0) or np.any(rem >= self.sizes):
            raise ValidationError("remaining", "count vector out of range")
        return (p - self.x - 1) * self.codes + int(np.dot(rem, self.radices))

    def decode(self, i: int) -> tuple[int, tuple[int, ...]]:
        p, code = divmod(int(i), self.codes)
        return p + self.x + 1, tuple(int(v) for v in (code // self.radices) % self.sizes)

    def initial_state(self, y: int) -> int:
        return self.state_index(y, self.sizes - 1)

    def transient_matrix(self) -> sp.csr_matrix:
        n = self.n_states
        rows = np.concatenate([np.arange(n), np.arange(n)])
        cols = np.concatenate([self.right, self.left])
        vals = np.concatenate([self.p_right, 1.0 - self.p_right])
        keep = cols >= 0
        return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n))

    def dump_csv(self, path) -> None:
        """Sparse triplets; column ``n_states`` is absorption at z, ``n_states+1`` at x."""
        n = self.n_states
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row_state", "col_state", "prob"])
            for i in range(n):
                for col, pr in ((self.right[i], self.p_right[i]), (self.left[i], 1 - self.p_right[i])):
                    c = n if col == -1 else n + 1 if col == -2 else col
                    w.writerow([i, int(c), format(float(pr), ".17g")])


def interval_rows(view: EnvironmentView, x: int, z: int) -> tuple[tuple[float, ...], ...]:
    return tuple(view.row(s).strengths for s in range(x + 1, z))


def chain_size(view: EnvironmentView, x: int, z: int) -> int:
    return (z - x - 1) * math.prod(len(r) + 1 for r in interval_rows(view, x, z))


def build_capped_chain(view: EnvironmentView, x: int, z: int, budget: int = DEFAULT_BUDGET) -> CappedChain:
    if not x < z - 1:
        raise ValidationError("interval", f"need at least one interior site, got ({x}, {z})")
    rows = interval_rows(view, x, z)
    width = len(rows)
    sizes = np.array([len(r) + 1 for r in rows], dtype=np.int64)
    required = width * math.prod(int(s) for s in sizes)
    if required > budget:
        raise BudgetExceeded(required, budget)
    C = int(np.prod(sizes))
    radices = np.ones(width, dtype=np.int64)
    for k in range(width - 2, -1, -1):
        radices[k] = radices[k + 1] * sizes[k + 1]
    codes = np.arange(C, dtype=np.int64)
    p_right = np.empty(width * C)
    right = np.empty(width * C, dtype=np.int64)
    left = np.empty(width * C, dtype=np.int64)
    for k, row in enumerate(rows):
        remaining = (codes // radices[k]) % sizes[k]
        has = remaining > 0
        table = np.append(np.asarray(row, dtype=float), 0.5)
        nxt_cookie = np.where(has, len(row) - remaining, len(row))
        new_code = codes - has * radices[k]
        sl = slice(k * C, (k + 1) * C)
        p_right[sl] = table[nxt_cookie]
        right[sl] = -1 if k == width - 1 else (k + 1) * C + new_code
        left[sl] = -2 if k == 0 else (k - 1) * C + new_code
    return CappedChain(x, z, rows, sizes, radices, p_right, right, left)


@dataclass
class SolveReport:
    states: int
    residual: float
    value: float | Fraction

    def to_dict(self) -> dict:
        v = self.value
        d = {"states": self.states, "residual": self.residual, "value": float(v)}
        if isinstance(v, Fraction):
            d["exact"] = f"{v.numerator}/{v.denominator}"
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _rhs(chain: CappedChain, quantity: str) -> np.ndarray:
    if quantity == "hit":
        return np.where(chain.right == -1, chain.p_right, 0.0)
    if quantity == "hit_left":
        return np.where(chain.left == -2, 1.0 - chain.p_right, 0.0)
    return np.ones(chain.n_states)


def _solve_float(chain: CappedChain, quantity: str, tol: float):
    A = (sp.identity(chain.n_states, format="csr") - chain.transient_matrix()).tocsc()
    b = _rhs(chain, quantity)
    lu = spla.splu(A)
    h = lu.solve(b)
    scale = max(1.0, float(np.max(np.abs(h))))
    for _ in range(4):
        r = b - A @ h
        residual = float(np.max(np.abs(r))) / scale
        if residual < tol:
            return h, residual
        h = h + lu.solve(r)
    raise SolverError(residual)


def _rational_system(chain: CappedChain, quantity: str):
    rows = [tuple(_frac(s) for s in r) for r in chain.rows]
    half = Fraction(1, 2)
    n = chain.n_states
    eqs = []
    for i in range(n):
        p, rem = chain.decode(i)
        k = p - chain.x - 1
        c = rem[k]
        pr = rows[k][len(rows[k]) - c] if c > 0 else half
        coeffs = {i: Fraction(1)}
        rhs = Fraction(1) if quantity == "time" else Fraction(0)
        for col, q in ((int(chain.right[i]), pr), (int(chain.left[i]), 1 - pr)):
            if col >= 0:
                coeffs[col] = coeffs.get(col, Fraction(0)) - q
            elif (col == -1 and quantity == "hit") or (col == -2 and quantity == "hit_left"):
                rhs += q
        eqs.append((coeffs, rhs))
    return eqs


def _solve_rational(chain: CappedChain, quantity: str) -> list[Fraction]:
    n = chain.n_states
    if n > EXACT_STATE_LIMIT:
        raise ValidationError("exact", f"rational solves are limited to {EXACT_STATE_LIMIT} states, chain has {n}")
    eqs = _rational_system(chain, quantity)
    M = [[Fraction(0)] * n + [rhs] for _, rhs in eqs]
    for i, (coeffs, _) in enumerate(eqs):
        for j, v in coeffs.items():
            M[i][j] = v
    for col in range(n):
        piv = next(r for r in range(col, n) if M[r][col] != 0)
        M[col], M[piv] = M[piv], M[col]
        pv = M[col][col]
        M[col] = [v / pv for v in M[col]]
        for r in range(n):
            if r != col and M[r][col] != 0:
                f = M[r][col]
                M[r] = [a - f * b for a, b in zip(M[r], M[col])]
    return [M[i][n] for i in range(n)]


def _solve(chain: CappedChain, y: int, quantity: str, exact: bool, tol: float) -> SolveReport:
    if not chain.x < y < chain.z:
        raise ValidationError("y", f"start {y} is not interior to ({chain.x}, {chain.z})")
    i = chain.initial_state(y)
    if exact:
        sol = _solve_rational(chain, quantity)
        return SolveReport(chain.n_states, 0.0, sol[i])
    h, residual = _solve_float(chain, quantity, tol)
    return SolveReport(chain.n_states, residual, float(h[i]))


def solve_hitting_prob(
    chain: CappedChain, y: int, exact: bool = False, tol: float = 1e-12, side: str = "right"
):
    """P_y[T_z < T_x] for a walker starting at ``y`` with full cookie rows.

    ``side="left"`` solves for P_y[T_x < T_z] directly instead of taking the
    complement, which keeps small left-exit probabilities accurate.
    """
    if side not in ("right", "left"):
        raise ValidationError("side", "expected 'right' or 'left'")
    return _solve(chain, y, "hit" if side == "right" else "hit_left", exact, tol).value


def solve_expected_exit_time(chain: CappedChain, y: int, exact: bool = False, tol: float = 1e-12):
    """E_y[T_x ^ T_z]."""
    return _solve(chain, y, "time", exact, tol).value


def solve_report(chain: CappedChain, y: int, quantity: str = "hit", exact: bool = False) -> SolveReport:
    if quantity not in ("hit", "hit_left", "time"):
        raise ValidationError("quantity", "expected 'hit', 'hit_left' or 'time'")
    return _solve(chain, y, quantity, exact, 1e-12)


# ---------------------------------------------------------------------------
# crossing-count route


@nb.njit(cache=True)
def _failure_table(strengths, dmax):
    """T[m, f] = P(exactly f failures before the m-th success), f <= dmax.

    Trial i (0-based) succeeds with probability strengths[i], or 1/2 past the
    end of the row.
    """
    L = strengths.shape[0]
    T = np.zeros((dmax + 2, dmax + 1))
    T[0, 0] = 1.0
    for m in range(1, dmax + 2):
        if m - 1 >= L:
            for f in range(dmax + 1):
                prev = T[m, f - 1] if f > 0 else 0.0
                T[m, f] = 0.5 * prev + 0.5 * T[m - 1, f]
        else:
            for f0 in range(dmax + 1):
                a = T[m - 1, f0]
                if a == 0.0:
                    continue
                run = a
                for f in range(f0, dmax + 1):
                    i = m - 1 + f
                    w = strengths[i] if i < L else 0.5
                    T[m, f] += run * w
                    run *= 1.0 - w
                    if run == 0.0:
                        break
    return T


@dataclass
class CrossingResult:
    """Bracket ``lower <= P <= upper`` from the truncated crossing counts."""

    lower: float
    upper: float
    dmax: int

    @property
    def value(self) -> float:
        return self.lower


def crossing_hitting_prob(
    view: EnvironmentView, y: int, x: int, z: int, tol: float = 1e-13, dmax: int | None = None, dmax_limit: int = 1 << 14
) -> CrossingResult:
    """P_y[T_z < T_x] via left-crossing counts of the edges of ``[x, z]``.

    Let D_w be the number of jumps from w+1 to w before T_z.  Reading the
    coin sequence of site w, D_{w-1} is the number of failures before the
    (D_w + [w >= y])-th success, so (D_w) is a Markov chain run from
    D_{z-1} = 0 down to D_x, and T_z < T_x exactly when D_x = 0.  Counts above
    ``dmax`` are dropped; their total mass widens the bracket.
    """
    if not x < y <= z:
        raise ValidationError("y", f"need x < y <= z, got ({x}, {y}, {z})")
    if y == z:
        return CrossingResult(1.0, 1.0, 0)
    d = dmax or 64
    while True:
        res = _crossing(view, y, x, z, d)
        if dmax is not None or res.upper - res.lower <= tol:
            return res
        if d >= dmax_limit:
            raise SolverError(res.upper - res.lower, "crossing counts did not concentrate below dmax_limit")
        d *= 2


def _crossing(view: EnvironmentView, y: int, x: int, z: int, dmax: int) -> CrossingResult:
    tables: dict[tuple[float, ...], np.ndarray] = {}
    v = np.zeros(dmax + 1)
    v[0] = 1.0
    lost = 0.0
    for w in range(z - 1, x, -1):
        row = view.row(w).strengths
        T = tables.get(row)
        if T is None:
            T = tables[row] = _failure_table(np.asarray(row, dtype=float), dmax)
        shift = 1 if w >= y else 0
        nv = v @ T[shift : shift + dmax + 1]
        lost += max(0.0, float(v.sum() - nv.sum()))
        v = nv
    lower = float(v[0])
    return CrossingResult(lower, min(1.0, lower + lost), dmax)


# ---------------------------------------------------------------------------
# escape bounds


@dataclass
class EscapeBounds:
    levels: list[int]
    values: list[float]
    methods: list[str] = field(default_factory=list)
    cutoff: int | None = None

    @property
    def gaps(self) -> list[float]:
        """Differences between consecutive bounds (truncation-bias diagnostic)."""
        return [a - b for a, b in zip(self.values, self.values[1:])]

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "values": self.values,
            "methods": self.methods,
            "cutoff": self.cutoff,
        }


def escape_prob_upper_bounds(
    view: EnvironmentView,
    levels: Sequence[int],
    method: str = "auto",
    budget: int = DEFAULT_BUDGET,
    tol: float = 1e-13,
) -> EscapeBounds:
    """h_K = w(0,1) * P_{1,psi}[T_K < T_0] for each K.

    Each h_K is the exact probability of reaching K before returning to 0 and
    decreases to the never-return probability.  ``method`` is ``"chain"``,
    ``"crossing"`` or ``"auto"`` (chain for small state spaces, where the
    direct solve is cheapest).  With
    ``"chain"`` the first level over budget ends the list and is reported as
    ``cutoff``.  ``tol`` is the bracket width asked of the crossing route.
    """
    if method not in ("auto", "chain", "crossing"):
        raise ValidationError("method", "expected auto, chain or crossing")
    levels = [int(k) for k in levels]
    if any(k < 1 for k in levels) or levels != sorted(set(levels)):
        raise ValidationError("levels", "levels must be increasing integers >= 1")
    first = view.strength(0, 1)
    after = leftover_psi(view, (0, 1))
    out = EscapeBounds([], [])
    for K in levels:
        if K == 1:
            value, used = first, "trivial"
        else:
            use_chain = method == "chain" or (method == "auto" and chain_size(after, 0, K) <= AUTO_CHAIN_STATES)
            if use_chain:
                try:
                    chain = build_capped_chain(after, 0, K, budget)
                except BudgetExceeded:
                    out.cutoff = K
                    break
                value, used = first * solve_hitting_prob(chain, 1), "chain"
            else:
                value, used = first * crossing_hitting_prob(after, 1, 0, K, tol=tol).lower, "crossing"
        out.levels.append(K)
        out.values.append(float(value))
        out.methods.append(used)
    return out


# ---------------------------------------------------------------------------
# worked environments and coupling cells


def omega_bar_view(j: int = 0, eps: float = 0.1, right_extent: int = 64) -> EnvironmentView:
    """The worst-case environment used for the zero-speed argument.

    Rows: (1) left of j-1, () at j-1, (1-eps, 1) at j and (1, 1) on
    j+1..j+right_extent.  Sites further right fall back to (1).
    """
    window = {j - 1: (), j: (1 - eps, 1.0)}
    for s in range(j + 1, j + right_extent + 1):
        window[s] = (1.0, 1.0)
    return make_environment(EnvironmentSpec.explicit_window(window, default=(1.0,)))


def cylinder_probability(p1: float, p2: float) -> float:
    """Probability of the six-step uniform cylinder on which the weak walk overtakes."""
    cells = [(p1, p2), (p2, 1.0), (0.5, p1), (0.0, 0.5), (0.0, 0.5), (0.5, p1)]
    return math.prod(b - a for a, b in cells)


def naive_overtake_probability(p1: float, p2: float, horizon: int) -> float:
    """Exact P(weak once-excited walk is strictly ahead at some n <= horizon).

    The uniforms matter only through which of the cells cut at 1/2, p1, p2
    they fall in, so the probability is a finite sum over cell sequences.
    """
    if not 0.5 < p1 <= p2 < 1:
        raise ValidationError("p1,p2", "need 1/2 < p1 <= p2 < 1")
    cuts = [0.0, 0.5, p1, p2, 1.0]
    cells = [(a, b) for a, b in zip(cuts, cuts[1:]) if b > a]
    frontier = {(0, frozenset(), 0, frozenset()): 1.0}
    hit = 0.0
    for _ in range(horizon):
        nxt: dict = defaultdict(float)
        for (x1, s1, x2, s2), pr in frontier.items():
            for a, b in cells:
                q1 = 0.5 if x1 in s1 else p1
                q2 = 0.5 if x2 in s2 else p2
                y1 = x1 + (1 if b <= q1 else -1)
                y2 = x2 + (1 if b <= q2 else -1)
                mass = pr * (b - a)
                if y1 > y2:
                    hit += mass
                else:
                    nxt[(y1, s1 | {x1}, y2, s2 | {x2})] += mass
        frontier = nxt
    return hit
