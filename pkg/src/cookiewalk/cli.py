"""Command-line entry point: ``cookiewalk <subcommand> [flags]``.

Settings resolve as command-line flag, then ``--config`` file (a JSON object
keyed by flag name without dashes, e.g. ``{"replicas": 1000, "K": 500}``),
then the built-in default listed in ``--help``.

Exit codes: 0 success, 1 runtime error, 2 usage error, 3 invalid
configuration, 4 a ``verify`` suite found violations.  Every error is one
stderr line starting ``error:<category>:``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .env import EnvironmentSpec, ValidationError, make_environment
from .estimate import McConfig, fmt

SCHEMA = "v1"
SUBCOMMANDS = ("simulate", "exact-hit", "escape", "speed", "phase-scan", "zero-speed", "leftover", "verify")
STOCHASTIC = {"simulate", "escape", "speed", "phase-scan", "zero-speed", "leftover", "verify"}
NEEDS_ENV = {"simulate", "exact-hit", "escape", "speed", "zero-speed", "leftover"}

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2, 3, 4

# built-in defaults, overridden by the config file and then by flags
DEFAULTS: dict[str, Any] = {
    "replicas": 1000,
    "K": 1000,
    "exact_K": 64,
    "max_steps": None,
    "horizon": 100_000,
    "horizons": "10000,100000,1000000",
    "p_min": 0.55,
    "p_max": 0.99,
    "p_steps": 45,
    "side": "left",
    "window": 50,
    "suite": "all",
    "cases": 200,
    "output": None,
    "output_format": "json",
    "threads": None,
    "ci_level": 0.95,
    "exact": False,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    subcommand: str
    spec: EnvironmentSpec | None
    cfg: McConfig | None
    output: str | None
    output_format: str
    seed: int | None
    options: dict = field(default_factory=dict)
    threads: int | None = None


def _common(p: argparse.ArgumentParser, env: bool = True) -> None:
    S = argparse.SUPPRESS
    if env:
        p.add_argument("--env", default=S, help="environment spec: JSON file path or inline JSON")
    p.add_argument("--seed", type=int, default=S, help="master seed (unsigned 64-bit)")
    p.add_argument("--replicas", type=int, default=S, help=f"Monte Carlo replicas (default {DEFAULTS['replicas']})")
    p.add_argument("--threads", type=int, default=S, help="worker cap (default: $COOKIEWALK_THREADS, else all cores)")
    p.add_argument("--config", default=S, help="JSON file of default flag values")
    p.add_argument("--output", default=S, help="output path (default: stdout)")
    p.add_argument("--output-format", choices=("json", "csv"), default=S, help="default json")
    p.add_argument("--ci-level", type=float, default=S, help="confidence level (default 0.95)")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = _Parser(prog="cookiewalk", description="Excited random walks in cookie environments.")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="one trajectory of the walk")
    _common(p)
    p.add_argument("--from", dest="start", type=int, default=S, help="start site (default 0)")
    p.add_argument("--horizon", type=int, default=S, help="number of steps (default 100000)")

    p = sub.add_parser("exact-hit", help="exact exit probability and time of an interval")
    _common(p)
    p.add_argument("--from", dest="start", type=int, required=True)
    p.add_argument("--left", type=int, required=True)
    p.add_argument("--right", type=int, required=True)
    p.add_argument("--side", choices=("left", "right"), default=S, help="reported exit side (default left)")
    p.add_argument("--exact", action="store_true", default=S, help="rational arithmetic")

    p = sub.add_parser("escape", help="probability of reaching K before returning to 0")
    _common(p)
    p.add_argument("--K", type=int, default=S, help="truncation level (default 1000)")
    p.add_argument("--exact-K", type=int, default=S, help="level of the exact upper bound, 0 to skip (default 64)")
    p.add_argument("--max-steps", type=int, default=S, help="per-replica step budget (default none)")

    p = sub.add_parser("speed", help="X_n/n and the u-series at one horizon")
    _common(p)
    p.add_argument("--horizon", type=int, default=S, help="steps per replica (default 100000)")

    p = sub.add_parser("phase-scan", help="never-return probability for two cookies of strength p")
    _common(p, env=False)
    p.add_argument("--p-min", type=float, default=S)
    p.add_argument("--p-max", type=float, default=S)
    p.add_argument("--p-steps", type=int, default=S)
    p.add_argument("--K", type=int, default=S, help="Monte Carlo truncation level (default 1000)")
    p.add_argument("--exact-K", type=int, default=S, help="exact bound level (default 64)")
    p.add_argument("--max-steps", type=int, default=S)

    p = sub.add_parser("zero-speed", help="X_n/n across horizons plus u-growth")
    _common(p)
    p.add_argument("--horizons", default=S, help="comma-separated horizons (default 10000,100000,1000000)")

    p = sub.add_parser("leftover", help="second walk on the cookies a first walk left")
    _common(p)
    p.add_argument("--window", type=int, default=S, help="window width W (default 50)")
    p.add_argument("--horizon", type=int, default=S, help="first-walk steps (default 100000)")

    p = sub.add_parser("verify", help="exact property suites")
    _common(p, env=False)
    p.add_argument("--suite", choices=("monotonicity", "first-passage", "oracle", "all"), default=S)
    p.add_argument("--cases", type=int, default=S, help="random instances per suite (default 200)")
    return parser


def load_spec(text: str) -> EnvironmentSpec:
    """Inline JSON (starts with '{') or a path to a JSON file."""
    s = text.strip()
    if not s.startswith("{"):
        try:
            with open(s) as fh:
                s = fh.read()
        except OSError as e:
            raise ValidationError("env", f"cannot read {text}: {e.strerror}") from None
    return EnvironmentSpec.from_json(s)


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as e:
        raise ValidationError("config", f"cannot read {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ValidationError("config", f"{path}: invalid JSON ({e.msg})") from None
    if not isinstance(data, dict):
        raise ValidationError("config", "config file must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def parse_args(argv: Sequence[str]) -> RunConfig:
    """Parse and validate; raises UsageError or ValidationError."""
    ns = vars(build_parser().parse_args(list(argv)))
    cmd = ns.pop("subcommand")
    conf = _load_config(ns.pop("config")) if "config" in ns else {}
    opts = dict(DEFAULTS)
    opts.update(conf)
    opts.update(ns)

    seed = opts.get("seed")
    if cmd in STOCHASTIC and seed is None:
        raise UsageError(f"--seed is required for {cmd}")
    if seed is not None and not 0 <= int(seed) < 2**64:
        raise ValidationError("seed", "must be an unsigned 64-bit integer")
    spec = None
    if cmd in NEEDS_ENV:
        if opts.get("env") is None:
            raise UsageError(f"--env is required for {cmd}")
        env = opts["env"]
        spec = EnvironmentSpec.from_dict(env) if isinstance(env, dict) else load_spec(env)

    threads = opts.get("threads")
    if threads is None and os.environ.get("COOKIEWALK_THREADS"):
        try:
            threads = int(os.environ["COOKIEWALK_THREADS"])
        except ValueError:
            raise ValidationError("COOKIEWALK_THREADS", "must be an integer") from None
    if threads is not None and threads < 1:
        raise ValidationError("threads", "must be >= 1")

    if opts["output_format"] not in ("json", "csv"):
        raise ValidationError("output_format", "must be json or csv")
    cfg = None
    if seed is not None:
        level = opts["K"] if cmd in ("escape", "phase-scan") else None
        cfg = McConfig(int(opts["replicas"]), int(seed), level=level, max_steps=opts.get("max_steps"), ci_level=float(opts["ci_level"]))
    return RunConfig(cmd, spec, cfg, opts.get("output"), opts["output_format"], seed, opts, threads)


# ---------------------------------------------------------------------------
# documents


def _csv(rows: list[list], header: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _est_rows(name: str, rc: RunConfig, est) -> list:
    return [name, rc.spec.spec_hash() if rc.spec else "", rc.seed, est.value, est.ci[0], est.ci[1], est.censored_fraction]


EST_HEADER = ["estimator", "spec_hash", "seed", "value", "lo", "hi", "censored"]


def _point(name: str, rc: RunConfig, value: float) -> list:
    return [name, rc.spec.spec_hash() if rc.spec else "", rc.seed, value, value, value, 0.0]


def _do_simulate(rc: RunConfig):
    from . import _kernels as K
    from .rng import stream_key

    view = make_environment(rc.spec)
    n, start = int(rc.options["horizon"]), int(rc.options.get("start", 0))
    if n < 0:
        raise ValidationError("horizon", "must be nonnegative")
    path = K.trajectory(K.compile_view(view), np.uint64(rc.spec.env_seed), rc.spec.resolved_phase(), np.uint64(stream_key(rc.seed, 0)), start, n)
    doc = {"start": start, "horizon": n, "final": int(path[-1]), "max": int(path.max()), "positions": path.tolist()}
    return doc, _csv([[i, int(x)] for i, x in enumerate(path)], ["step", "position"])


def _do_exact_hit(rc: RunConfig):
    from .exact import build_capped_chain, solve_report

    o = rc.options
    x, y, z = int(o["left"]), int(o["start"]), int(o["right"])
    if not x < y < z:
        raise ValidationError("from", f"need left < from < right, got {x} < {y} < {z}")
    chain = build_capped_chain(make_environment(rc.spec), x, z)
    exact = bool(o["exact"])
    left = solve_report(chain, y, "hit_left", exact)
    right = solve_report(chain, y, "hit", exact)
    time = solve_report(chain, y, "time", exact)
    chosen = left if o["side"] == "left" else right
    doc = {
        "from": y,
        "left": x,
        "right": z,
        "side": o["side"],
        "value": float(chosen.value),
        "p_left": left.to_dict(),
        "p_right": right.to_dict(),
        "expected_exit_time": time.to_dict(),
        "states": chain.n_states,
    }
    rows = [["p_left", float(left.value), left.to_dict().get("exact", "")], ["p_right", float(right.value), right.to_dict().get("exact", "")], ["expected_exit_time", float(time.value), time.to_dict().get("exact", "")]]
    return doc, _csv(rows, ["quantity", "value", "exact"])


def _do_escape(rc: RunConfig):
    from .estimate import mc_escape_prob
    from .exact import escape_prob_upper_bounds

    est = mc_escape_prob(rc.spec, rc.cfg)
    doc = {"K": rc.cfg.level, "estimate": est.to_dict()}
    rows = [_est_rows("escape_K%d" % rc.cfg.level, rc, est)]
    kx = int(rc.options["exact_K"])
    if kx > 0 and rc.spec.kind in ("homogeneous", "explicit_window"):
        b = escape_prob_upper_bounds(make_environment(rc.spec), [kx])
        doc["exact_bound"] = {"K": kx, "value": b.values[0], "method": b.methods[0]}
        rows.append(_point("exact_bound_K%d" % kx, rc, b.values[0]))
    return doc, _csv(rows, EST_HEADER)


def _do_speed(rc: RunConfig):
    from .estimate import mc_speed

    res = mc_speed(rc.spec, rc.cfg, int(rc.options["horizon"]))
    doc = res.to_dict()
    doc["u_partial_len"] = len(doc.pop("u_partial"))
    rows = [_est_rows("x_over_n", rc, res.estimate), _point("u_hat", rc, res.u_hat), _point("v_hat", rc, res.v_hat)]
    return doc, _csv(rows, EST_HEADER)


def phase_grid(opts: dict) -> list[float]:
    n = int(opts["p_steps"])
    if n < 1:
        raise ValidationError("p_steps", "must be >= 1")
    lo, hi = float(opts["p_min"]), float(opts["p_max"])
    grid = np.linspace(lo, hi, n) if n > 1 else np.array([lo])
    return [float(round(p, 12)) for p in grid]


def _do_phase_scan(rc: RunConfig):
    from .experiments import phase_csv, phase_scan

    pts = phase_scan(phase_grid(rc.options), rc.cfg, exact_K=int(rc.options["exact_K"]))
    return {"K": rc.cfg.level, "points": [p.to_dict() for p in pts]}, phase_csv(pts)


def _do_zero_speed(rc: RunConfig):
    from .experiments import zero_speed_scan

    hs = rc.options["horizons"]
    try:
        horizons = [int(float(h)) for h in (hs.split(",") if isinstance(hs, str) else hs)]
    except ValueError:
        raise ValidationError("horizons", f"not a list of integers: {hs!r}") from None
    rep = zero_speed_scan(rc.spec, horizons, rc.cfg)
    rows = [[s.extra["horizon"], s.value, s.ci[0], s.ci[1]] for s in rep.speeds]
    return rep.to_dict(), _csv(rows, ["horizon", "x_over_n", "lo", "hi"])


def _do_leftover(rc: RunConfig):
    from .experiments import leftover_iterate

    rep = leftover_iterate(rc.spec, rc.cfg, window=int(rc.options["window"]), horizon=int(rc.options["horizon"]))
    rows = [
        _est_rows("mean_leftover_drift", rc, rep.mean_leftover_drift),
        _est_rows("second_walk_return", rc, rep.second_walk_return),
        _point("leftover_expected_delta", rc, rep.leftover_classification.expected_delta),
    ]
    return rep.to_dict(), _csv(rows, EST_HEADER)


def _do_verify(rc: RunConfig):
    from .experiments import lemma1_bound_suite, monotonicity_suite, oracle_agreement_suite

    suite, n, seed = rc.options["suite"], int(rc.options["cases"]), int(rc.seed)
    reps = []
    if suite in ("monotonicity", "all"):
        reps += monotonicity_suite(n, seed=seed)
    if suite in ("first-passage", "all"):
        reps.append(lemma1_bound_suite(n, seed=seed))
    if suite in ("oracle", "all"):
        reps.append(oracle_agreement_suite(n, seed=seed))
    doc = {"suite": suite, "passed": all(r.passed for r in reps), "reports": [r.to_dict() for r in reps]}
    rows = [[r.name, r.cases, r.violations, r.max_excess, str(r.passed).lower()] for r in reps]
    return doc, _csv(rows, ["suite", "cases", "violations", "max_excess", "passed"])


HANDLERS = {
    "simulate": _do_simulate,
    "exact-hit": _do_exact_hit,
    "escape": _do_escape,
    "speed": _do_speed,
    "phase-scan": _do_phase_scan,
    "zero-speed": _do_zero_speed,
    "leftover": _do_leftover,
    "verify": _do_verify,
}


def write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".cookiewalk-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def render(rc: RunConfig, doc: dict, csv_text: str) -> str:
    if rc.output_format == "csv":
        return csv_text
    head = {"schema": SCHEMA, "command": rc.subcommand, "seed": rc.seed}
    if rc.spec is not None:
        head["spec"] = rc.spec.to_dict()
        head["spec_hash"] = rc.spec.spec_hash()
    if rc.cfg is not None:
        head["replicas"] = rc.cfg.replicas
        head["ci_level"] = rc.cfg.ci_level
    head["result"] = doc
    return json.dumps(_clean(head), separators=(",", ":")) + "\n"


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    import numba

    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def run(rc: RunConfig) -> int:
    _set_threads(rc.threads)
    doc, csv_text = HANDLERS[rc.subcommand](rc)
    text = render(rc, doc, csv_text)
    if rc.output:
        write_atomic(rc.output, text)
    else:
        sys.stdout.write(text)
    if rc.subcommand == "verify" and not doc["passed"]:
        failed = ",".join(r["name"] for r in doc["reports"] if not r["passed"])
        print(f"error:verify: violations in {failed}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def _fail(category: str, msg: str, code: int) -> int:
    print(f"error:{category}: {msg}", file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    # numba falls back from an old TBB on its own; the notice is just noise here
    warnings.filterwarnings("ignore", message=".*TBB.*")
    try:
        rc = parse_args(argv)
    except UsageError as e:
        return _fail("usage", str(e), EXIT_USAGE)
    except ValidationError as e:
        return _fail("config", str(e), EXIT_CONFIG)
    try:
        return run(rc)
    except ValidationError as e:
        return _fail("config", str(e), EXIT_CONFIG)
    except Exception as e:  # noqa: BLE001 - every runtime failure maps to exit 1
        return _fail("runtime", f"{type(e).__name__}: {e}", EXIT_RUNTIME)
