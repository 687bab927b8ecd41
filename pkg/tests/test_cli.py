from __future__ import annotations

import json
import math

import pytest

from bundledyn.cli import main
from bundledyn.config import ConfigError, load_config, parse_config


def _write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def _run(capsys, argv):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


OSC = {"system": {"name": "oscillator"}, "integrator": {"h0": 0.01, "t_final": 1.0, "adapt": False}}


def test_simulate_row_count_and_header(tmp_path, capsys):
    cfg = _write(tmp_path, OSC)
    traj, diag = tmp_path / "t.csv", tmp_path / "d.jsonl"
    code, out, _ = _run(capsys, ["simulate", cfg, "--out-traj", str(traj), "--out-diag", str(diag)])
    assert code == 0
    lines = traj.read_text().splitlines()
    assert lines[0].startswith("# config_sha256=")
    assert lines[1] == "t,x1,x2,xi1,pi1,phi,energy,h_used"
    assert len(lines) - 2 == 1 + math.ceil(1.0 / 0.01)
    assert float(lines[-1].split(",")[0]) == 1.0
    summary = json.loads(out)
    assert summary["steps"] == 100
    assert summary["config_digest"] == lines[0].split("=")[1]
    records = [json.loads(r) for r in diag.read_text().splitlines()]
    assert len(records) == 100
    assert all(r["config_digest"] == summary["config_digest"] for r in records)


def test_simulate_circle_constraint_small(tmp_path, capsys):
    cfg = _write(tmp_path, {"system": {"name": "circle_constraint"},
                            "integrator": {"h0": 0.01, "t_final": 5.0, "adapt": False, "monitor_geometry": False}})
    code, out, _ = _run(capsys, ["simulate", cfg, "--out-traj", str(tmp_path / "t.csv"),
                                 "--out-diag", str(tmp_path / "d.jsonl")])
    assert code == 0
    summary = json.loads(out)
    # the predicted violation scales like h^2 with a unit-order constant
    assert summary["max_abs_phi_predicted"] <= 2.0 * 0.01**2
    assert summary["max_abs_phi"] <= 1e-10


@pytest.mark.parametrize("doc", [
    {"system": {"name": "pendulum"}},
    {"system": {"name": "oscillator"}, "integrator": {"h0": -1.0}},
    {"system": {"name": "oscillator"}, "bogus": 1},
    {"system": {"name": "oscillator"}, "integrator": {"t_final": 0.0}},
    {"system": {"name": "oscillator", "initial": {"x": [1.0]}}},
])
def test_simulate_malformed_config(tmp_path, capsys, doc):
    cfg = _write(tmp_path, doc)
    traj, diag = tmp_path / "t.csv", tmp_path / "d.jsonl"
    code, out, err = _run(capsys, ["simulate", cfg, "--out-traj", str(traj), "--out-diag", str(diag)])
    assert code == 2
    assert json.loads(err.strip().splitlines()[-1])["error"] == "config"
    assert not traj.exists() and not diag.exists()


def test_simulate_unreadable_and_invalid_json(tmp_path, capsys):
    assert _run(capsys, ["simulate", str(tmp_path / "missing.json")])[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run(capsys, ["simulate", str(bad)])[0] == 2


def test_simulate_runtime_failure_exit_three(tmp_path, capsys):
    # alpha > 0 at the feasible center drives the multiplier to -alpha/eps
    doc = {"system": {"name": "toda"}, "constraint": {"alpha_dissipation": 1.0},
           "integrator": {"h0": 0.02, "h_min": 0.01, "t_final": 0.5}}
    cfg = _write(tmp_path, doc)
    traj = tmp_path / "t.csv"
    code, _, err = _run(capsys, ["simulate", cfg, "--out-traj", str(traj), "--out-diag", str(tmp_path / "d")])
    assert code == 3
    assert json.loads(err.strip())["error"] == "StepFailureError"
    assert not traj.exists()


def test_simulate_deterministic(tmp_path, capsys):
    cfg = _write(tmp_path, {"system": {"name": "toda", "params": {"n": 3}}, "integrator": {"h0": 0.02, "t_final": 0.5}})
    outs = []
    for tag in "ab":
        path = tmp_path / f"{tag}.csv"
        assert _run(capsys, ["simulate", cfg, "--out-traj", str(path), "--out-diag", str(tmp_path / f"{tag}.jsonl")])[0] == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_config_round_trip():
    doc = {"system": {"name": "toda", "params": {"n": 4, "beta_weight": 0.3}},
           "integrator": {"h0": 0.005}, "constraint": {"eps_reg": 1e-5}, "mixing": {"mode": "curvature"}}
    cfg = parse_config(doc)
    again = parse_config(json.loads(cfg.to_json()))
    assert again == cfg
    assert again.digest() == cfg.digest()
    assert cfg.integrator["h0"] == 0.005
    # system defaults win over the generic integrator defaults
    assert cfg.integrator["projection"] == "inequality"
    assert cfg.constraint["alpha_dissipation"] == 0.0
    assert parse_config({"system": {"name": "toda", "params": {"n": 5}}}).digest() != cfg.digest()


def test_config_rejects_bad_mixing():
    with pytest.raises(ConfigError):
        parse_config({"system": {"name": "oscillator"}, "mixing": {"mode": "spline"}})
    with pytest.raises(ConfigError):
        parse_config({"system": {"name": "oscillator"}, "constraint": {"alpha_dissipation": -1}})


def test_load_config_output_paths(tmp_path):
    path = _write(tmp_path, {"system": {"name": "oscillator"}, "output": {"report": "r.json"}})
    cfg = load_config(path)
    assert cfg.output == {"trajectory": "trajectory.csv", "diagnostics": "diagnostics.jsonl", "report": "r.json"}


def test_converge(tmp_path, capsys):
    cfg = _write(tmp_path, {"system": {"name": "circle_constraint"}, "integrator": {"h0": 0.02, "t_final": 5.0}})
    out = tmp_path / "conv.json"
    assert _run(capsys, ["converge", cfg, "--levels", "4", "--out", str(out)])[0] == 0
    rep = json.loads(out.read_text())
    assert 1.7 <= rep["fitted_p_phi"] <= 2.3
    assert len(rep["hs"]) == 4
    assert len(rep["config_digest"]) == 64
    assert _run(capsys, ["converge", cfg, "--levels", "2"])[0] == 2


def test_converge_free_particle_exact(tmp_path, capsys):
    cfg = _write(tmp_path, {"system": {"name": "oscillator", "params": {"omega": 0.0}},
                            "integrator": {"h0": 0.1, "t_final": 1.0}})
    code, out, _ = _run(capsys, ["converge", cfg, "--levels", "3"])
    assert code == 0
    assert json.loads(out)["glob_exact"] is True


@pytest.mark.parametrize("system,expected", [("circle_constraint", "first_class"), ("toda", "second_class")])
def test_classify(tmp_path, capsys, system, expected):
    cfg = _write(tmp_path, {"system": {"name": system}})
    code, out, _ = _run(capsys, ["classify", cfg, "--samples", "40"])
    assert code == 0
    rep = json.loads(out)
    assert rep["classification"] == expected
    assert rep["samples_used"] == 40


def test_classify_bad_inputs(tmp_path, capsys):
    cfg = _write(tmp_path, {"system": {"name": "circle_constraint"}})
    assert _run(capsys, ["classify", cfg, "--samples", "0"])[0] == 2
    plain = _write(tmp_path, {"system": {"name": "oscillator"}}, "plain.json")
    assert _run(capsys, ["classify", plain])[0] == 2


def test_lax_report(tmp_path, capsys):
    out = tmp_path / "lax.json"
    code, _, _ = _run(capsys, ["lax", "--n", "4", "--t-final", "10", "--dt", "1e-3", "--out", str(out)])
    assert code == 0
    rep = json.loads(out.read_text())
    assert rep["flaschka"]["drift"] <= 1e-6
    assert rep["epsilon_crit"] == pytest.approx(2 / 3 / (2 * 1.0 * 0.5))
    assert rep["oracle_sign"] == -1.0
    table = rep["zero_curvature_residual"]
    assert set(table) == {"oracle", "printed"}
    assert set(table["oracle"]) == {"lambda^0", "lambda^1", "lambda^2"}
    assert set(rep["coupled_spectrum_drift"]) == {"0.0", "0.1"}


def test_lax_custom_momenta(capsys):
    code, out, _ = _run(capsys, ["lax", "--n", "3", "--p", "1,0,-1", "--t-final", "0.5"])
    assert code == 0
    assert json.loads(out)["epsilon_crit"] == pytest.approx(1.0)


@pytest.mark.parametrize("argv", [
    ["lax", "--dt", "0"],
    ["lax", "--dt", "-1e-3"],
    ["lax", "--n", "1"],
    ["lax", "--n", "3", "--p", "1,2"],
    ["lax", "--t-final", "0"],
    ["frobnicate"],
])
def test_lax_argument_errors(capsys, argv):
    assert _run(capsys, argv)[0] == 2


def test_validate_constant_delta(tmp_path, capsys):
    cfg = _write(tmp_path, {"system": {"name": "toda"}})
    code, out, _ = _run(capsys, ["validate", cfg, "--grid", "20"])
    assert code == 0
    rep = json.loads(out)
    assert rep["C1"]["finite"] and rep["C1"]["max_delta"] == 0.5
    assert rep["C3"]["lipschitz_quotient"] == 0.0


def test_validate_decaying_delta(tmp_path, capsys):
    cfg = _write(tmp_path, {"system": {"name": "toda", "params": {"uncertainty_decay": True}}})
    code, out, _ = _run(capsys, ["validate", cfg, "--grid", "40"])
    assert code == 0
    assert json.loads(out)["C4b"]["decay_exponent"] == pytest.approx(2.0, abs=0.25)


def test_validate_single_point(tmp_path, capsys):
    cfg = _write(tmp_path, {"system": {"name": "toda"}})
    code, out, _ = _run(capsys, ["validate", cfg, "--grid", "1"])
    assert code == 0
    rep = json.loads(out)
    assert rep["C3"]["lipschitz_quotient"] is None
    assert any("C3" in note for note in rep["notes"])
    assert rep["C1"]["max_delta"] == 0.5
    assert _run(capsys, ["validate", cfg, "--grid", "0"])[0] == 2


def test_console_script_entry_point():
    from importlib.metadata import entry_points
    eps = [e for e in entry_points(group="console_scripts") if e.name == "bundledyn"]
    assert eps and eps[0].value == "bundledyn.cli:main"
