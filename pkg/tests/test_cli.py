import json
from pathlib import Path

import pytest

from streamdebt.cli import CSV_COLUMNS, apply_sweep, main, parse_values
from streamdebt.model import load_config

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr().out


def test_theory_twohop(capsys):
    code, out = run(capsys, "theory", "--config", CONFIGS / "twohop.json")
    assert code == 0
    rec = json.loads(out)
    assert rec["p_e"] == pytest.approx(0.00712845902741, rel=1e-9)
    assert rec["config"]["m"] == [5, 5] and rec["config"]["debt_cap"] == 25
    assert rec["pi_residual"] <= 1e-8


def test_theory_threehop(capsys):
    code, out = run(capsys, "theory", "--config", CONFIGS / "threehop.json")
    assert code == 0 and json.loads(out)["config"]["hops"] == 3


def test_invalid_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(dict(hops=2, k_per_slot=3, n_dest=3, q=[0.9, 0.9], delta=2, colour="red")))
    code, out = run(capsys, "theory", "--config", bad)
    assert code == 2
    rec = json.loads(out)
    assert rec["error"] == "ConfigRejected"
    assert {v["code"] for v in rec["violations"]} == {"UnknownKey", "RateExceedsCapacity"}


def test_missing_file_exit_code(tmp_path, capsys):
    code, _ = run(capsys, "theory", "--config", tmp_path / "nope.json")
    assert code == 2


def test_solver_failure_exit_code(tmp_path, capsys):
    cfg = tmp_path / "over.json"
    cfg.write_text(json.dumps(dict(hops=2, k_per_slot=1, n_dest=1, q=[0.5, 0.5], delta=1, m=[5, 5], debt_cap=8)))
    code, out = run(capsys, "theory", "--config", cfg, "--allow-unstable")
    assert code == 3
    assert json.loads(out)["error"] in ("IllConditioned", "SingularSystem")


def test_literal_zero_rule_flag(capsys):
    code, out = run(capsys, "theory", "--config", CONFIGS / "twohop.json", "--literal-zero-rule")
    assert code == 3 and json.loads(out)["error"] == "IllConditioned"


def test_mc_output_is_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert main(["mc", "--config", str(CONFIGS / "twohop.json"), "--slots", "200000", "--seed", "7", "--shards", "2", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()
    rec = json.loads(a.read_text())
    assert rec["seed"] == 7 and rec["slots"] == 200000 and rec["config"]["hops"] == 2


def test_oracle_scripted_pattern(capsys):
    code, out = run(capsys, "oracle", "--config", CONFIGS / "scripted.json", "--pattern", CONFIGS / "scripted.txt")
    assert code == 0
    rec = json.loads(out)
    assert rec["mismatched_slots"] == 0
    wins = [w["window"] for w in rec["windows"]]
    assert wins[:2] == [[2, 5], [8, 11]]


def test_oracle_random(capsys):
    code, out = run(capsys, "oracle", "--config", CONFIGS / "scripted.json", "--seeds", "5", "--horizon", "25")
    assert code == 0 and json.loads(out)["instances"] == 5


def test_validate(tmp_path, capsys):
    cfg = tmp_path / "small.json"
    cfg.write_text(json.dumps(dict(hops=2, k_per_slot=1, n_dest=3, q=[0.9, 0.9], delta=2, m=[4, 4], debt_cap=6, overflow_mode="clamp")))
    code, out = run(capsys, "validate", "--config", cfg, "--rounds", "10000")
    assert code == 0 and json.loads(out)["ok"] is True


def test_sweep_csv_stable(tmp_path, capsys):
    outs = []
    for name in ("a.csv", "b.csv"):
        p = tmp_path / name
        argv = ["sweep", "--config", CONFIGS / "rate_delta.json", "--param", "delta", "--values", "0..4", "--slots", "20000", "--seed", "3", "--out", p]
        assert main([str(a) for a in argv]) == 0
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]
    lines = outs[0].decode().splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS)
    p_e = [float(line.split(",")[1]) for line in lines[1:]]
    assert len(p_e) == 5 and all(b < a for a, b in zip(p_e, p_e[1:]))


def test_sweep_json_stable(capsys):
    argv = ["sweep", "--config", CONFIGS / "twohop.json", "--param", "epsilon", "--values", "0.05:0.1:0.05", "--format", "json"]
    _, first = run(capsys, *argv)
    _, second = run(capsys, *argv)
    assert first == second
    rows = json.loads(first)["rows"]
    assert [r["sweep_value"] for r in rows] == [0.05, 0.1]
    assert rows[0]["p_e_hat"] is None


def test_sweep_bad_param(capsys):
    code, _ = run(capsys, "sweep", "--config", CONFIGS / "twohop.json", "--param", "colour", "--values", "1")
    assert code == 2


def test_sweep_point_rejected(capsys):
    code, out = run(capsys, "sweep", "--config", CONFIGS / "twohop.json", "--param", "rate", "--values", "1/3,3/3")
    assert code == 2 and "RateExceedsCapacity" in out


def test_parse_values():
    assert parse_values("0..3", "delta") == [0, 1, 2, 3]
    assert parse_values("0.01:0.03:0.01", "epsilon") == [0.01, 0.02, 0.03]
    assert parse_values("2/6, 4/6", "rate") == ["2/6", "4/6"]
    assert parse_values("1,2", "hops") == [1, 2]


def test_apply_sweep_variants():
    base = load_config(CONFIGS / "rate_delta.json")
    assert apply_sweep(base, "rate", "4/6").k_per_slot == 4
    assert apply_sweep(base, "rate", 2 / 3).k_per_slot == 4
    assert apply_sweep(base, "epsilon", 0.2).q == (0.8, 0.8)
    assert apply_sweep(base, "q_l", 0.85).q == (0.9, 0.85)
    assert apply_sweep(base, "q_0", 0.85).q == (0.85, 0.9)
    three = apply_sweep(base, "hops", 3)
    assert three.hops == 3 and len(three.m) == 3
