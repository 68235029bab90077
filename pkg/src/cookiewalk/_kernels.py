"""Compiled walk kernels.

The Python reference implementation lives in :mod:`cookiewalk.walk`; these
kernels reproduce it step for step (same uniforms, same environment hash) and
are only used for replica-heavy work.  Replicas are independent and write to
their own output slots, so results do not depend on the thread count.
"""

from __future__ import annotations

import numba as nb
import numpy as np

from .env import EnvironmentView
from .rng import ENV_SALT, GOLDEN, INV_2_53, PHASE_SALT, _mix64_array, mix64

KIND_CODES = {"homogeneous": 0, "iid_mixture": 1, "periodic": 2, "explicit_window": 3}

_G = np.uint64(GOLDEN)
_ENV_SALT = np.uint64(ENV_SALT)


@nb.njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True, inline="always")
def _uniform(key, counter):
    return np.float64(_mix(key + np.uint64(counter) * _G) >> np.uint64(11)) * INV_2_53


@nb.njit(cache=True)
def _site_unit(seed, site):
    z = _mix(_mix(seed ^ _ENV_SALT) ^ (np.uint64(site) * _G))
    return np.float64(z >> np.uint64(11)) * INV_2_53


@nb.njit(cache=True)
def _row_index(E, env_seed, phase, b):
    kind, rows, cumw, win_lo, win_idx, cons_lo, cons, shift = E
    if kind == 0:
        return 0
    if kind == 2:
        return (b + phase) % cumw.shape[0]
    if kind == 1:
        u = _site_unit(env_seed, b)
        nr = cumw.shape[0]
        for k in range(nr - 1):
            if u < cumw[k]:
                return k
        return nr - 1
    k = b - win_lo
    if 0 <= k < win_idx.shape[0]:
        return win_idx[k]
    return 0


@nb.njit(cache=True)
def _strength(E, env_seed, phase, x, i):
    """Strength at view site ``x`` on the ``i``-th visit (1-based)."""
    kind, rows, cumw, win_lo, win_idx, cons_lo, cons, shift = E
    c = 0
    k = x - cons_lo
    if 0 <= k < cons.shape[0]:
        c = cons[k]
    idx = i - 1 + c
    if idx >= rows.shape[1]:
        return 0.5
    r = _row_index(E, env_seed, phase, x + shift)
    return rows[r, idx]


def compile_view(view: EnvironmentView):
    """Flatten a view into the tuple layout the kernels expect."""
    spec = view.spec
    rows = list(spec.rows)
    win_lo, win_idx = 0, np.zeros(0, dtype=np.int64)
    if spec.kind == "explicit_window" and spec.window:
        sites = [s for s, _ in spec.window]
        win_lo = min(sites)
        win_idx = np.zeros(max(sites) - win_lo + 1, dtype=np.int64)
        for s, r in spec.window:
            win_idx[s - win_lo] = len(rows)
            rows.append(r)
    width = max(1, max(len(r) for r in rows))
    table = np.full((len(rows), width), 0.5)
    for k, r in enumerate(rows):
        table[k, : len(r)] = r.strengths
    if spec.kind == "iid_mixture":
        acc, cum = 0.0, []
        for w in spec.weights:
            acc += w
            cum.append(acc)
        cumw = np.array(cum)
    else:
        cumw = np.zeros(len(spec.rows))
    if view.consumed:
        cons_lo = min(view.consumed)
        cons = np.zeros(max(view.consumed) - cons_lo + 1, dtype=np.int64)
        for x, c in view.consumed.items():
            cons[x - cons_lo] = c
    else:
        cons_lo, cons = 0, np.zeros(0, dtype=np.int64)
    return (
        np.int64(KIND_CODES[spec.kind]),
        table,
        cumw,
        np.int64(win_lo),
        win_idx,
        np.int64(cons_lo),
        cons,
        np.int64(view.shift),
    )


def replica_env(view: EnvironmentView, master_seed: int, n: int, annealed: bool):
    """Per-replica environment seeds and periodic phases.

    Annealed runs redraw the environment for every replica; quenched runs
    reuse the view's own seed.
    """
    spec = view.spec
    with np.errstate(over="ignore"):
        if annealed and spec.kind in ("iid_mixture", "periodic"):
            base = np.uint64(spec.env_seed ^ mix64(master_seed ^ ENV_SALT))
            seeds = _mix64_array(base ^ _mix64_array(np.arange(1, n + 1, dtype=np.uint64)))
        else:
            seeds = np.full(n, spec.env_seed, dtype=np.uint64)
        if spec.kind == "periodic" and spec.phase == "random":
            h = _mix64_array(_mix64_array(seeds ^ np.uint64(PHASE_SALT)))
            unit = (h >> np.uint64(11)).astype(np.float64) * INV_2_53
            phases = (unit * spec.period).astype(np.int64) % spec.period
        else:
            phases = np.full(n, spec.resolved_phase(), dtype=np.int64)
    return seeds, phases


# ---------------------------------------------------------------------------
# kernels


@nb.njit(cache=True)
def trajectory(E, env_seed, phase, key, start, n):
    """Positions X_0..X_n of one walk; the reference for agreement tests."""
    pos = np.empty(n + 1, dtype=np.int64)
    off = n - start
    vis = np.zeros(2 * n + 1, dtype=np.int64)
    x = start
    vis[x + off] = 1
    pos[0] = x
    for t in range(1, n + 1):
        s = _strength(E, env_seed, phase, x, vis[x + off])
        if _uniform(key, t) < s:
            x += 1
        else:
            x -= 1
        vis[x + off] += 1
        pos[t] = x
    return pos


@nb.njit(cache=True, parallel=True)
def escape(E, env_seeds, phases, keys, K, max_steps):
    """Outcome per replica: 1 reached K without returning to 0, 0 returned, -1 truncated."""
    R = keys.shape[0]
    outcome = np.empty(R, dtype=np.int8)
    steps = np.empty(R, dtype=np.int64)
    for r in nb.prange(R):
        vis = np.zeros(K + 1, dtype=np.int64)
        x = 0
        vis[0] = 1
        t = 0
        res = -1
        while t < max_steps:
            s = _strength(E, env_seeds[r], phases[r], x, vis[x])
            t += 1
            if _uniform(keys[r], t) < s:
                x += 1
            else:
                x -= 1
            if x <= 0:
                res = 0
                break
            if x >= K:
                res = 1
                break
            vis[x] += 1
        outcome[r] = res
        steps[r] = t
    return outcome, steps


@nb.njit(cache=True)
def _to_level_one(E, env_seed, phase, key, start, level, max_steps):
    left = 256
    lo = start - left
    vis = np.zeros(level - lo + 1, dtype=np.int64)
    x = start
    vis[x - lo] = 1
    t = 0
    dp = 0.0
    dn = 0.0
    hit = x >= level
    while not hit and t < max_steps:
        s = _strength(E, env_seed, phase, x, vis[x - lo])
        if s != 0.5:
            if x >= 0:
                dp += 2.0 * s - 1.0
            else:
                dn += 2.0 * s - 1.0
        t += 1
        if _uniform(key, t) < s:
            x += 1
        else:
            x -= 1
        if x >= level:
            hit = True
            break
        if x < lo:
            left *= 2
            nlo = start - left
            grown = np.zeros(level - nlo + 1, dtype=np.int64)
            grown[lo - nlo :] = vis
            vis = grown
            lo = nlo
        vis[x - lo] += 1
    return dp, dn, t, hit


@nb.njit(cache=True, parallel=True)
def to_level(E, env_seeds, phases, keys, start, level, max_steps):
    """Run each replica until it first hits ``level``.

    Returns consumed drift split by sign of the site, steps and a reached flag.
    """
    R = keys.shape[0]
    dpos = np.zeros(R)
    dneg = np.zeros(R)
    steps = np.empty(R, dtype=np.int64)
    reached = np.zeros(R, dtype=np.bool_)
    for r in nb.prange(R):
        dp, dn, t, hit = _to_level_one(E, env_seeds[r], phases[r], keys[r], start, level, max_steps)
        dpos[r] = dp
        dneg[r] = dn
        steps[r] = t
        reached[r] = hit
    return dpos, dneg, steps, reached


@nb.njit(cache=True, parallel=True)
def horizon(E, env_seeds, phases, keys, start, n, checkpoints, site_lo, site_hi, gap_cap):
    """Run every replica for exactly ``n`` steps.

    Outputs: positions at ``checkpoints``; departures from and eaten/remaining
    drift at sites ``site_lo..site_hi-1``; total consumed drift D_n; the
    highest level reached above ``start``; and flags
    ``gaps[r, j] = (T_{j+1} - T_j >= j)`` for levels ``j < gap_cap``.
    """
    R = keys.shape[0]
    C = checkpoints.shape[0]
    W = site_hi - site_lo
    M = E[1].shape[1]
    pos_at = np.zeros((R, C), dtype=np.int64)
    departures = np.zeros((R, W), dtype=np.int64)
    eaten = np.zeros((R, W))
    remaining = np.zeros((R, W))
    dtotal = np.zeros(R)
    maxlevel = np.zeros(R, dtype=np.int64)
    gaps = np.zeros((R, gap_cap), dtype=np.uint8)
    for r in nb.prange(R):
        off = n - start
        vis = np.zeros(2 * n + 1, dtype=np.int64)
        x = start
        vis[x + off] = 1
        top = 0
        t_prev = 0
        c = 0
        d = 0.0
        for t in range(1, n + 1):
            s = _strength(E, env_seeds[r], phases[r], x, vis[x + off])
            d += 2.0 * s - 1.0
            if _uniform(keys[r], t) < s:
                x += 1
            else:
                x -= 1
            vis[x + off] += 1
            if x - start > top:
                top = x - start
                j = top - 1
                if 1 <= j < gap_cap and t - t_prev >= j:
                    gaps[r, j] = 1
                t_prev = t
            while c < C and checkpoints[c] == t:
                pos_at[r, c] = x
                c += 1
        dtotal[r] = d
        maxlevel[r] = top
        for w in range(W):
            site = site_lo + w
            k = site + off
            dep = 0
            if 0 <= k < vis.shape[0]:
                dep = vis[k]
            if site == x:
                dep -= 1
            departures[r, w] = dep
            for i in range(1, M + 1):
                s = _strength(E, env_seeds[r], phases[r], site, i)
                if i <= dep:
                    eaten[r, w] += 2.0 * s - 1.0
                else:
                    remaining[r, w] += 2.0 * s - 1.0
    return pos_at, departures, eaten, remaining, dtotal, maxlevel, gaps


@nb.njit(cache=True, parallel=True)
def coupled_dominating(E, env_seeds, phases, keys, start, n):
    """Minimum of X_t - Y_t over t <= n, with Y a symmetric walk on the same uniforms."""
    R = keys.shape[0]
    gap_min = np.empty(R, dtype=np.int64)
    for r in nb.prange(R):
        off = n - start
        vis = np.zeros(2 * n + 1, dtype=np.int64)
        x = start
        y = start
        vis[x + off] = 1
        g = 0
        for t in range(1, n + 1):
            s = _strength(E, env_seeds[r], phases[r], x, vis[x + off])
            u = _uniform(keys[r], t)
            x += 1 if u < s else -1
            y += 1 if u < 0.5 else -1
            vis[x + off] += 1
            if x - y < g:
                g = x - y
        gap_min[r] = g
    return gap_min


@nb.njit(cache=True, parallel=True)
def coupled_naive(p1, p2, keys, n):
    """First time the weak once-excited walk is strictly ahead (-1 if never)."""
    R = keys.shape[0]
    first = np.empty(R, dtype=np.int64)
    for r in nb.prange(R):
        v1 = np.zeros(2 * n + 1, dtype=np.bool_)
        v2 = np.zeros(2 * n + 1, dtype=np.bool_)
        x1 = 0
        x2 = 0
        f = -1
        for t in range(1, n + 1):
            u = _uniform(keys[r], t)
            s1 = 0.5 if v1[x1 + n] else p1
            s2 = 0.5 if v2[x2 + n] else p2
            v1[x1 + n] = True
            v2[x2 + n] = True
            x1 += 1 if u < s1 else -1
            x2 += 1 if u < s2 else -1
            if x1 > x2:
                f = t
                break
        first[r] = f
    return first


def strength_kernel(view: EnvironmentView, site: int, visit_index: int, env_seed=None) -> float:
    """Kernel-side strength lookup; exposed for agreement tests."""
    E = compile_view(view)
    seed = view.spec.env_seed if env_seed is None else env_seed
    phase = view.spec.redraw(seed).resolved_phase()
    return _strength(E, np.uint64(seed), np.int64(phase), np.int64(site), np.int64(visit_index))


__all__ = [
    "compile_view",
    "replica_env",
    "trajectory",
    "escape",
    "to_level",
    "horizon",
    "coupled_dominating",
    "coupled_naive",
    "strength_kernel",
]
