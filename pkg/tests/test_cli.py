import json
import math

import numpy as np
import pytest

from torsion.cli import ProblemError, dumps, main, parse_angle, parse_problem
from torsion.trajectory import read_csv, to_csv


def write(tmp_path, doc, name="problem.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


PH = {
    "n": 2,
    "Q": {"rotation": "pi/2"},
    "T": "2pi",
    "potential": {"family": "pseudo_harmonic", "params": {"a": 4}},
    "solver": {"M": 8, "Nq": 64, "starts": 8},
}


@pytest.mark.parametrize(
    "text,value",
    [("pi/2", math.pi / 2), ("3pi/4", 0.75 * math.pi), ("-2*pi/3", -2 * math.pi / 3), ("pi", math.pi), ("0.25", 0.25), (1.5, 1.5), ("2 pi", 2 * math.pi)],
)
def test_parse_angle(text, value):
    assert parse_angle(text) == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("bad", ["pie", "pi/0", "__import__('os')", "", True, None])
def test_parse_angle_rejects(bad):
    with pytest.raises(ProblemError):
        parse_angle(bad)


def test_dumps_is_deterministic_json():
    doc = {"b": 0.1, "a": [1, 2.5, float("nan")], "c": {"x": True, "y": None}, "d": np.float64(1 / 3)}
    text = dumps(doc)
    assert text.index('"b"') < text.index('"a"')
    assert "0.10000000000000001" in text
    assert "0.33333333333333331" in text
    back = json.loads(text)
    assert back["a"][2] is None


def test_problem_parsing_variants():
    base = {"n": 3, "T": 1.0, "potential": {"family": "quadratic", "params": {"mu": 2.0}}}
    for Q in ("identity", "minus_identity", {"matrix": np.eye(3).tolist()}, {"blocks": [{"rotation": "pi/3"}, -1]}):
        prob = parse_problem(dict(base, Q=Q))
        assert prob.Q.shape == (3, 3)
        assert np.allclose(prob.Q.T @ prob.Q, np.eye(3))


@pytest.mark.parametrize(
    "patch,field",
    [
        ({"extra": 1}, "extra"),
        ({"n": 0}, "n"),
        ({"T": -1}, "T"),
        ({"Q": "sideways"}, "Q"),
        ({"Q": {"matrix": [[1, 0], [0, 2]]}}, "Q"),
        ({"potential": {"family": "nope"}}, "potential.family"),
        ({"potential": {"family": "pseudo_harmonic", "params": {"a": -1}}}, "potential.params"),
        ({"solver": {"rho": 0}}, "solver"),
        ({"solver": {"speed": 3}}, "solver.speed"),
    ],
)
def test_problem_validation(patch, field):
    with pytest.raises(ProblemError) as info:
        parse_problem(dict(PH, **patch))
    assert info.value.field == field


def test_missing_key():
    doc = dict(PH)
    del doc["T"]
    with pytest.raises(ProblemError) as info:
        parse_problem(doc)
    assert info.value.field == "T"


def test_analyze_examples(tmp_path, capsys):
    p = write(tmp_path, {"n": 1, "Q": "identity", "T": "2pi", "potential": {"family": "quadratic", "params": {"mu": 5}}})
    assert main(["analyze", "--problem", p, "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["schema"] == "torsion/1"
    assert (doc["p_T"], doc["bound"], doc["M0"]) == (4, 2, 1.0)

    p = write(tmp_path, {"n": 2, "Q": {"rotation": "pi/2"}, "T": "2pi", "potential": {"family": "quadratic", "params": {"mu": 1}}})
    assert main(["analyze", "--problem", p, "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["p_T"] == 4 and doc["M0"] == pytest.approx(1 / 16)

    p = write(tmp_path, {"n": 1, "Q": "identity", "T": "2pi", "potential": {"family": "quadratic", "params": {"mu": -1}}})
    assert main(["analyze", "--problem", p]) == 0
    out = capsys.readouterr().out
    assert "p_T = 0" in out and "bound = 0" in out


def test_bad_input_exit_code(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text('{"n": 2,\n  "Q": }')
    assert main(["analyze", "--problem", str(p)]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["analyze", "--problem", str(tmp_path / "missing.json")]) == 2


def test_audit_command(tmp_path, capsys):
    p = write(tmp_path, PH)
    assert main(["audit", "--problem", p, "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert [doc["conditions"][k]["status"] for k in ("V1", "V2", "V3", "V4", "V5")] == ["passed"] * 5
    assert doc["conditions"]["V6"]["status"] == "not-applicable"
    q = write(tmp_path, dict(PH, potential={"family": "quadratic", "params": {"mu": 4}}), "q.json")
    assert main(["audit", "--problem", q, "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["conditions"]["V4"]["status"] == "failed"


def test_solve_verify_roundtrip(tmp_path, capsys):
    p = write(tmp_path, PH)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["solve", "--problem", p, "--out", str(out1), "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["found_orbits"] >= doc["bound"] == 4
    assert list(doc)[:2] == ["schema", "command"]
    assert main(["solve", "--problem", p, "--out", str(out2)]) == 0
    capsys.readouterr()
    assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()
    for s in doc["solutions"]:
        assert (out1 / s["csv_path"]).exists()
    assert main(["verify", "--problem", p, str(out1 / "report.json"), "--json"]) == 0
    ver = json.loads(capsys.readouterr().out)
    assert ver["passed"] and len(ver["checks"]) == len(doc["solutions"])


def test_verify_detects_perturbation(tmp_path, capsys):
    p = write(tmp_path, PH)
    out = tmp_path / "o"
    assert main(["solve", "--problem", p, "--out", str(out), "--starts", "4"]) == 0
    capsys.readouterr()
    from torsion.cli import load_problem
    from torsion.trajectory import fit

    prob = load_problem(p)
    meta, t, pos, _ = read_csv(out / "solution_000.csv")
    x = fit(prob.sym, meta["M"], t, pos)
    c = np.array(x.c)
    j, k = np.unravel_index(np.argmax(np.abs(c)), c.shape)
    c[j, k] += 1e-2
    bad = x.from_array(prob.sym, c, x.M)
    to_csv(bad, out / "perturbed.csv")
    assert main(["verify", "--problem", p, str(out / "perturbed.csv")]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_verify_zero_trajectory(tmp_path, capsys):
    p = write(tmp_path, PH)
    from torsion.cli import load_problem
    from torsion.trajectory import TrajectoryCoeffs

    prob = load_problem(p)
    to_csv(TrajectoryCoeffs.zeros(prob.sym, 4), tmp_path / "zero.csv")
    assert main(["verify", "--problem", p, str(tmp_path / "zero.csv"), "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["checks"][0]["collocation_residual"] == 0.0


def test_solve_with_no_xplus(tmp_path, capsys):
    p = write(tmp_path, {"n": 1, "Q": "identity", "T": "2pi", "potential": {"family": "quadratic", "params": {"mu": -1}}, "solver": {"M": 4, "starts": 2}})
    assert main(["solve", "--problem", p, "--out", str(tmp_path / "z"), "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["bound"] == 0 and doc["verdict"] == "meets_bound"


def test_module_entry_point():
    import subprocess
    import sys

    r = subprocess.run([sys.executable, "-m", "torsion", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "analyze" in r.stdout
