import json
import os
import subprocess
import sys

import pytest

from cookiewalk import cli

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
KOKO = os.path.join(ROOT, "configs", "koko.json")
TWO = '{"kind":"homogeneous","rows":[[0.9,0.9]]}'


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_parse_escape():
    rc = cli.parse_args(["escape", "--env", TWO, "--K", "1000", "--replicas", "100000", "--seed", "7"])
    assert rc.subcommand == "escape"
    assert rc.cfg.replicas == 100000 and rc.cfg.level == 1000 and rc.cfg.master_seed == 7
    assert rc.spec.rows[0].strengths == (0.9, 0.9)


def test_missing_seed_is_usage_error(capsys):
    code, _, err = run(["speed", "--env", TWO], capsys)
    assert code == 2
    assert err.startswith("error:usage:") and "--seed" in err


def test_unknown_flag_and_subcommand(capsys):
    assert run(["escape", "--env", TWO, "--seed", "1", "--frobnicate"], capsys)[0] == 2
    assert run(["dance"], capsys)[0] == 2
    assert run([], capsys)[0] == 2


def test_phase_grid():
    rc = cli.parse_args(["phase-scan", "--p-min", "0.55", "--p-max", "0.99", "--p-steps", "45", "--seed", "7"])
    g = cli.phase_grid(rc.options)
    assert len(g) == 45 and g[0] == 0.55 and g[-1] == 0.99


def test_invalid_env_is_config_error(capsys):
    code, _, err = run(["escape", "--env", '{"kind":"homogeneous","rows":[[1.5]]}', "--seed", "1"], capsys)
    assert code == 3 and err.startswith("error:config:")
    code, _, err = run(["escape", "--env", "/no/such/file.json", "--seed", "1"], capsys)
    assert code == 3
    code, _, _ = run(["escape", "--env", TWO, "--seed", "1", "--replicas", "0"], capsys)
    assert code == 3


def test_exact_hit_worst_case(capsys):
    code, out, _ = run(["exact-hit", "--env", KOKO, "--from", "-1", "--left", "-3", "--right", "0"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["schema"] == "v1"
    assert doc["result"]["value"] == pytest.approx(1 / 6, abs=1e-12)
    assert "0.16666666666666" in out
    code, out, _ = run(["exact-hit", "--env", KOKO, "--from", "-1", "--left", "-4", "--right", "0", "--exact"], capsys)
    assert json.loads(out)["result"]["p_left"]["exact"] == "1/12"


def test_exact_hit_csv(capsys):
    code, out, _ = run(["exact-hit", "--env", KOKO, "--from", "-1", "--left", "-3", "--right", "0", "--output-format", "csv"], capsys)
    lines = out.splitlines()
    assert lines[0] == "quantity,value,exact"
    assert lines[1].startswith("p_left,0.16666666666666666")


def test_exact_hit_bad_interval(capsys):
    assert run(["exact-hit", "--env", KOKO, "--from", "0", "--left", "-3", "--right", "0"], capsys)[0] == 3


def test_verify_passes(capsys):
    code, out, _ = run(["verify", "--suite", "monotonicity", "--cases", "200", "--seed", "7"], capsys)
    assert code == 0
    assert json.loads(out)["result"]["passed"] is True


def test_verify_failure_exit_code(capsys, monkeypatch):
    from cookiewalk import experiments

    def broken(n, seed=0, **kw):
        r = experiments.SuiteReport("initial_point", n, 1, 0.5, [{"x": 0}])
        return [r]

    monkeypatch.setattr(experiments, "monotonicity_suite", broken)
    code, _, err = run(["verify", "--suite", "monotonicity", "--cases", "3", "--seed", "7"], capsys)
    assert code == 4 and err.startswith("error:verify:")


def test_outputs_byte_identical(tmp_path, capsys):
    outs = []
    for name in ("a.csv", "b.csv"):
        p = tmp_path / name
        argv = ["escape", "--env", TWO, "--K", "50", "--replicas", "500", "--seed", "7", "--output", str(p), "--output-format", "csv"]
        assert cli.main(argv) == 0
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]
    text = outs[0].decode()
    assert text.splitlines()[0] == "estimator,spec_hash,seed,value,lo,hi,censored"
    assert not list(tmp_path.glob(".cookiewalk-*"))


def test_config_precedence(tmp_path, capsys):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"replicas": 33, "horizon": 40, "env": TWO}))
    rc = cli.parse_args(["speed", "--config", str(conf), "--seed", "1", "--horizon", "50"])
    assert rc.cfg.replicas == 33
    assert rc.options["horizon"] == 50
    rc = cli.parse_args(["speed", "--env", TWO, "--seed", "1"])
    assert rc.cfg.replicas == cli.DEFAULTS["replicas"]
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    assert run(["speed", "--config", str(bad), "--seed", "1"], capsys)[0] == 3


def test_threads_env_fallback(monkeypatch):
    monkeypatch.setenv("COOKIEWALK_THREADS", "1")
    assert cli.parse_args(["speed", "--env", TWO, "--seed", "1"]).threads == 1
    assert cli.parse_args(["speed", "--env", TWO, "--seed", "1", "--threads", "2"]).threads == 2
    monkeypatch.setenv("COOKIEWALK_THREADS", "many")
    with pytest.raises(cli.ValidationError):
        cli.parse_args(["speed", "--env", TWO, "--seed", "1"])


@pytest.mark.parametrize(
    "argv,header",
    [
        (["simulate", "--env", TWO, "--seed", "3", "--horizon", "20"], "step,position"),
        (["speed", "--env", TWO, "--seed", "3", "--horizon", "2000", "--replicas", "20"], "estimator,spec_hash,seed,value,lo,hi,censored"),
        (["zero-speed", "--env", TWO, "--seed", "3", "--horizons", "500,5000", "--replicas", "20"], "horizon,x_over_n,lo,hi"),
        (["phase-scan", "--seed", "3", "--p-min", "0.8", "--p-max", "0.9", "--p-steps", "2", "--K", "20", "--replicas", "200", "--exact-K", "20"], "p,predicted,mc,mc_lo,mc_hi,exact_K,exact_bound"),
        (["leftover", "--env", TWO, "--seed", "3", "--window", "10", "--horizon", "20000", "--replicas", "20"], "estimator,spec_hash,seed,value,lo,hi,censored"),
        (["verify", "--suite", "oracle", "--cases", "5", "--seed", "3"], "suite,cases,violations,max_excess,passed"),
    ],
)
def test_every_subcommand_csv_and_json(argv, header, capsys):
    code, out, err = run(argv + ["--output-format", "csv"], capsys)
    assert code == 0, err
    assert out.splitlines()[0] == header
    code, out, err = run(argv, capsys)
    assert code == 0, err
    doc = json.loads(out)
    assert doc["schema"] == "v1" and doc["command"] == argv[0]


def test_simulate_deterministic_march(capsys):
    code, out, _ = run(["simulate", "--env", '{"kind":"homogeneous","rows":[[1.0]]}', "--seed", "1", "--horizon", "5", "--from", "2"], capsys)
    assert json.loads(out)["result"]["positions"] == [2, 3, 4, 5, 6, 7]


def test_module_entry_point():
    p = subprocess.run(
        [sys.executable, "-m", "cookiewalk", "exact-hit", "--env", KOKO, "--from", "-1", "--left", "-2", "--right", "0"],
        capture_output=True,
        text=True,
        env={**os.environ, "PYTHONWARNINGS": "ignore"},
    )
    assert p.returncode == 0
    assert json.loads(p.stdout)["result"]["value"] == pytest.approx(0.5)
