"""Cookie environments: rows, environment laws, realized views and transforms.

A cookie row lists the right-jump probabilities used on the 1st, 2nd, ...
visit to a site; every visit past the end of the row uses 1/2.  An
:class:`EnvironmentSpec` is the law that assigns rows to sites and an
:class:`EnvironmentView` is one realization of it together with per-site
counts of already eaten cookies (the leftover transform) and a shift.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from .rng import PHASE_SALT, site_hash, to_unit

KINDS = ("homogeneous", "iid_mixture", "periodic", "explicit_window")


class ValidationError(ValueError):
    """Invalid input; ``field`` names the offending field."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass(frozen=True)
class CookieRow:
    strengths: tuple[float, ...] = ()

    def __post_init__(self):
        values = tuple(float(s) for s in self.strengths)
        for i, s in enumerate(values):
            if not (0.5 <= s <= 1.0) or math.isnan(s):
                raise ValidationError(f"strengths[{i}]", f"cookie strength {s!r} outside [1/2, 1]")
        object.__setattr__(self, "strengths", values)

    def __len__(self):
        return len(self.strengths)

    def strength_at_index(self, i: int) -> float:
        """Strength used on the ``i``-th visit (1-based)."""
        if i < 1:
            raise ValidationError("visit_index", f"must be >= 1, got {i}")
        return self.strengths[i - 1] if i <= len(self.strengths) else 0.5

    @property
    def drift(self) -> float:
        return drift_delta(self)

    def residual(self, eaten: int) -> "CookieRow":
        """Row left after the bottom ``eaten`` cookies were removed."""
        return CookieRow(self.strengths[eaten:])

    def trimmed(self) -> "CookieRow":
        """Same row without trailing strength-1/2 cookies."""
        s = list(self.strengths)
        while s and s[-1] == 0.5:
            s.pop()
        return CookieRow(tuple(s))

    def dominated_by(self, other: "CookieRow") -> bool:
        n = max(len(self), len(other))
        return all(self.strength_at_index(i) <= other.strength_at_index(i) for i in range(1, n + 1))


def as_row(row) -> CookieRow:
    return row if isinstance(row, CookieRow) else CookieRow(tuple(row))


def drift_delta(row: CookieRow) -> float:
    """Total drift stored in a row, the sum of ``2 s - 1`` over its cookies."""
    return math.fsum(2.0 * s - 1.0 for s in as_row(row).strengths)


@dataclass(frozen=True)
class EnvironmentSpec:
    """Declarative environment law.

    ``phase`` is ``"random"`` or a fixed integer offset and only matters for
    periodic specs.  For ``explicit_window`` specs, ``rows`` holds the single
    default row used off the window.
    """

    kind: str
    rows: tuple[CookieRow, ...]
    weights: tuple[float, ...] | None = None
    phase: str | int = "random"
    env_seed: int = 0
    window: tuple[tuple[int, CookieRow], ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError("kind", f"unknown kind {self.kind!r}; expected one of {KINDS}")
        rows = tuple(as_row(r) for r in self.rows)
        object.__setattr__(self, "rows", rows)
        if not rows:
            raise ValidationError("rows", "at least one row is required")
        if not (0 <= int(self.env_seed) < 2**64):
            raise ValidationError("env_seed", "must be an unsigned 64-bit integer")
        object.__setattr__(self, "env_seed", int(self.env_seed))
        if self.kind == "homogeneous" and len(rows) != 1:
            raise ValidationError("rows", "homogeneous spec needs exactly one row")
        if self.kind == "periodic":
            if len(rows) < 2:
                raise ValidationError("rows", "periodic spec needs at least two rows")
            if self.phase != "random" and not isinstance(self.phase, int):
                raise ValidationError("phase", "must be 'random' or an integer")
        if self.kind == "iid_mixture":
            if self.weights is None or len(self.weights) != len(rows):
                raise ValidationError("weights", "one weight per row is required")
            w = tuple(float(x) for x in self.weights)
            if any(x < 0 or math.isnan(x) for x in w):
                raise ValidationError("weights", "weights must be nonnegative")
            if abs(math.fsum(w) - 1.0) > 1e-12:
                raise ValidationError("weights", f"weights sum to {math.fsum(w)!r}, not 1")
            object.__setattr__(self, "weights", w)
        elif self.weights is not None:
            raise ValidationError("weights", f"weights are only allowed for iid_mixture, not {self.kind}")
        if self.kind == "explicit_window":
            if len(rows) != 1:
                raise ValidationError("rows", "explicit_window takes exactly one default row")
            items = dict(self.window or ())
            object.__setattr__(
                self, "window", tuple(sorted((int(k), as_row(v)) for k, v in items.items()))
            )
        elif self.window is not None:
            raise ValidationError("window", "window is only allowed for explicit_window")
        object.__setattr__(self, "_wmap", dict(self.window or ()))

    # constructors -----------------------------------------------------

    @classmethod
    def homogeneous(cls, row, env_seed: int = 0) -> "EnvironmentSpec":
        return cls("homogeneous", (as_row(row),), env_seed=env_seed)

    @classmethod
    def iid_mixture(cls, rows, weights, env_seed: int = 0) -> "EnvironmentSpec":
        return cls("iid_mixture", tuple(as_row(r) for r in rows), tuple(weights), env_seed=env_seed)

    @classmethod
    def periodic(cls, rows, phase: str | int = "random", env_seed: int = 0) -> "EnvironmentSpec":
        return cls("periodic", tuple(as_row(r) for r in rows), phase=phase, env_seed=env_seed)

    @classmethod
    def explicit_window(cls, window: Mapping[int, Sequence[float]], default=(), env_seed: int = 0):
        return cls(
            "explicit_window",
            (as_row(default),),
            window=tuple((int(k), as_row(v)) for k, v in window.items()),
            env_seed=env_seed,
        )

    # realization ------------------------------------------------------

    @property
    def period(self) -> int:
        return len(self.rows)

    def resolved_phase(self) -> int:
        if self.kind != "periodic":
            return 0
        if self.phase == "random":
            return int(to_unit(site_hash(self.env_seed, 0, PHASE_SALT)) * self.period) % self.period
        return int(self.phase) % self.period

    def row_index(self, site: int) -> int:
        """Index into ``rows`` used at ``site`` (-1 for a window override)."""
        if self.kind == "homogeneous":
            return 0
        if self.kind == "periodic":
            return (site + self.resolved_phase()) % self.period
        if self.kind == "iid_mixture":
            u = to_unit(site_hash(self.env_seed, site))
            acc = 0.0
            for k, w in enumerate(self.weights[:-1]):
                acc += w
                if u < acc:
                    return k
            return len(self.rows) - 1
        return -1 if site in self._window_map else 0

    def row_at(self, site: int) -> CookieRow:
        idx = self.row_index(site)
        if idx < 0:
            return self._window_map[site]
        return self.rows[idx]

    @property
    def _window_map(self) -> dict[int, CookieRow]:
        return self._wmap

    @property
    def max_row_len(self) -> int:
        lens = [len(r) for r in self.rows] + [len(r) for _, r in (self.window or ())]
        return max(lens)

    def support(self) -> list[tuple[CookieRow, float]]:
        """Rows of the site-marginal law with their probabilities."""
        if self.kind == "homogeneous":
            return [(self.rows[0], 1.0)]
        if self.kind == "iid_mixture":
            return [(r, w) for r, w in zip(self.rows, self.weights) if w > 0]
        if self.kind == "periodic":
            if self.phase != "random":
                raise ValidationError(
                    "phase", "site marginal not stationary; use random phase for classification"
                )
            return [(r, 1.0 / self.period) for r in self.rows]
        raise ValidationError("kind", "explicit_window environments are not stationary")

    @property
    def is_stationary(self) -> bool:
        return self.kind in ("homogeneous", "iid_mixture") or (
            self.kind == "periodic" and self.phase == "random"
        )

    def redraw(self, env_seed: int) -> "EnvironmentSpec":
        return replace(self, env_seed=env_seed)

    # serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "explicit_window":
            d["default"] = list(self.rows[0].strengths)
            d["window"] = {str(k): list(r.strengths) for k, r in self.window}
        else:
            d["rows"] = [list(r.strengths) for r in self.rows]
        if self.weights is not None:
            d["weights"] = list(self.weights)
        if self.kind == "periodic":
            d["phase"] = self.phase
        d["env_seed"] = self.env_seed
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "EnvironmentSpec":
        if not isinstance(d, Mapping):
            raise ValidationError("spec", "environment spec must be a JSON object")
        known = {"kind", "rows", "weights", "phase", "env_seed", "window", "default"}
        extra = set(d) - known
        if extra:
            raise ValidationError(sorted(extra)[0], "unknown field")
        kind = d.get("kind")
        if kind is None:
            raise ValidationError("kind", "missing")
        try:
            if kind == "explicit_window":
                default = d.get("default", d.get("rows", [[]])[0] if d.get("rows") else [])
                return cls.explicit_window(
                    {int(k): v for k, v in d.get("window", {}).items()},
                    default=default,
                    env_seed=d.get("env_seed", 0),
                )
            rows = d.get("rows")
            if not rows:
                raise ValidationError("rows", "at least one row is required")
            phase = d.get("phase", "random")
            if isinstance(phase, str) and phase != "random":
                phase = int(phase)
            return cls(
                kind,
                tuple(CookieRow(tuple(r)) for r in rows),
                tuple(d["weights"]) if "weights" in d else None,
                phase=phase,
                env_seed=d.get("env_seed", 0),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError("spec", str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EnvironmentSpec":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ValidationError("spec", f"invalid JSON: {exc}") from exc

    def spec_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:12]


@dataclass(frozen=True)
class EnvironmentView:
    """A realized environment with eaten-cookie offsets and a site shift.

    ``strength(x, i)`` is the base row at ``x + shift`` read at index
    ``i + consumed[x]``.  Views are immutable; transforms return new views.
    """

    spec: EnvironmentSpec
    consumed: Mapping[int, int] = field(default_factory=dict)
    shift: int = 0

    def __post_init__(self):
        cleaned = {}
        for k, v in dict(self.consumed).items():
            if v < 0:
                raise ValidationError("consumed", f"negative count at site {k}")
            if v:
                cleaned[int(k)] = int(v)
        object.__setattr__(self, "consumed", MappingProxyType(dict(sorted(cleaned.items()))))

    def __hash__(self):
        return hash((self.spec, tuple(self.consumed.items()), self.shift))

    def __eq__(self, other):
        if not isinstance(other, EnvironmentView):
            return NotImplemented
        return (self.spec, dict(self.consumed), self.shift) == (
            other.spec,
            dict(other.consumed),
            other.shift,
        )

    def base_row(self, site: int) -> CookieRow:
        return self.spec.row_at(site + self.shift)

    def row(self, site: int) -> CookieRow:
        """Residual row at ``site`` after the recorded eaten cookies."""
        return self.base_row(site).residual(self.consumed.get(site, 0))

    def strength(self, site: int, visit_index: int) -> float:
        if visit_index < 1:
            raise ValidationError("visit_index", f"must be >= 1, got {visit_index}")
        return self.base_row(site).strength_at_index(visit_index + self.consumed.get(site, 0))

    def shifted(self, k: int) -> "EnvironmentView":
        """The view seen from ``k``: site ``z`` of the result is site ``z + k`` here."""
        return EnvironmentView(
            self.spec, {x - k: c for x, c in self.consumed.items()}, self.shift + k
        )

    def leftover(self, path: Sequence[int]) -> "EnvironmentView":
        return leftover_psi(self, path)

    def with_consumed(self, extra: Mapping[int, int]) -> "EnvironmentView":
        merged = dict(self.consumed)
        for x, c in extra.items():
            merged[x] = merged.get(x, 0) + c
        return EnvironmentView(self.spec, merged, self.shift)


def make_environment(spec: EnvironmentSpec) -> EnvironmentView:
    if not isinstance(spec, EnvironmentSpec):
        raise ValidationError("spec", f"expected EnvironmentSpec, got {type(spec).__name__}")
    return EnvironmentView(spec)


def strength_at(view: EnvironmentView, site: int, visit_index: int) -> float:
    return view.strength(site, visit_index)


def expected_delta(spec: EnvironmentSpec) -> float:
    """Expected site drift under the site-marginal law of ``spec``."""
    return math.fsum(w * drift_delta(r) for r, w in spec.support())


def expected_first_drift(spec: EnvironmentSpec) -> float:
    """Expected drift of the first cookie, ``E[2 w(0,1) - 1]``."""
    return math.fsum(w * (2 * r.strength_at_index(1) - 1) for r, w in spec.support())


def check_path(path: Sequence[int]) -> list[int]:
    pts = [int(p) for p in path]
    for a, b in zip(pts, pts[1:]):
        if abs(a - b) != 1:
            raise ValidationError("path", f"not nearest-neighbor: step {a} -> {b}")
    return pts


def visit_counts(path: Iterable[int]) -> dict[int, int]:
    """Counts of path positions excluding the final one."""
    pts = list(path)
    counts: dict[int, int] = {}
    for x in pts[:-1]:
        counts[x] = counts.get(x, 0) + 1
    return counts


def leftover_psi(view: EnvironmentView, path: Sequence[int]) -> EnvironmentView:
    """Remove one bottom cookie per departure along ``path``.

    Every occurrence of a site except the final position of the path eats a
    cookie there.  The input view is left untouched.
    """
    pts = check_path(path)
    if len(pts) <= 1:
        return view
    return view.with_consumed(visit_counts(pts))
