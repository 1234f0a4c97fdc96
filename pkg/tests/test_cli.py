import json

import pytest

from conftest import shipped
from otlab.cli import main, parse_sweep
from otlab.config import ConfigError, ExperimentConfig, set_path


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def short_gaussian(steps=150, n=201):
    cfg = set_path(shipped("gaussian.toml"), "flow.n_steps", steps)
    return set_path(cfg, "grid.n", n)


def run(args, tmp_path, sub="out"):
    out = tmp_path / sub
    return main(args + ["--out", str(out)]), out


@pytest.mark.parametrize("name", ["gaussian.toml", "ppower3.toml", "ppower2.toml"])
def test_criterion_pass(name, config_dir, tmp_path):
    code, out = run(["criterion", "--config", str(config_dir / name)], tmp_path)
    assert code == 0
    rep = json.loads((out / "criterion.json").read_text())
    assert rep["passed"] and rep["theorem"]["passed"]


def test_criterion_fail(config_dir, tmp_path):
    code, out = run(["criterion", "--config", str(config_dir / "criterion_fail.toml")], tmp_path)
    assert code == 1
    assert json.loads((out / "criterion.json").read_text())["theorem"]["worst_margin"] < 0


def test_missing_field_exit_2(tmp_path):
    cfg = shipped("gaussian.toml")
    del cfg["cost"]
    code, out = run(["criterion", "--config", write(tmp_path, cfg)], tmp_path)
    assert code == 2
    assert "cost" in json.loads((out / "error.json").read_text())["error"]


def test_bad_inputs_exit_2(tmp_path):
    assert run(["criterion", "--config", str(tmp_path / "nope.toml")], tmp_path)[0] == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("[grid\n")
    assert run(["criterion", "--config", str(bad)], tmp_path)[0] == 2
    assert run(["flow"], tmp_path)[0] == 2
    cfg = set_path(shipped("gaussian.toml"), "cost.kind", "bogus")
    assert run(["criterion", "--config", write(tmp_path, cfg)], tmp_path)[0] == 2


def test_flow_zero_steps_exit_2(tmp_path):
    cfg = set_path(shipped("gaussian.toml"), "flow.n_steps", 0)
    code, out = run(["flow", "--config", write(tmp_path, cfg)], tmp_path)
    assert code == 2 and "n_steps" in json.loads((out / "error.json").read_text())["error"]


def test_flow_solver_failure_exit_2(tmp_path):
    cfg = set_path(short_gaussian(), "flow.solver",
                   {"method": "picard", "max_inner_iters": 1, "max_restarts": 0})
    code, out = run(["flow", "--config", write(tmp_path, cfg)], tmp_path)
    assert code == 2 and "step 1" in json.loads((out / "error.json").read_text())["error"]


def test_flow_gaussian_outputs(tmp_path):
    code, out = run(["flow", "--config", write(tmp_path, short_gaussian())], tmp_path)
    assert code == 0
    rep = json.loads((out / "summary.json").read_text())
    assert rep["certificate"]["status"] == "certified"
    assert rep["summary"]["final_sup_dist"] < 1e-4
    header = (out / "trace.csv").read_text().splitlines()[0]
    assert header.startswith("k,F,I_H,I_L,I_G")


def test_flow_ppower3_report(config_dir, tmp_path):
    code, out = run(["flow", "--config", str(config_dir / "ppower3.toml")], tmp_path)
    assert code == 0
    rep = json.loads((out / "summary.json").read_text())
    assert rep["ppower"]["passed"] and rep["ppower"]["theta"] == pytest.approx(0.75 * 1.5**2)


def test_determinism(tmp_path):
    path = write(tmp_path, short_gaussian(steps=20))
    a = run(["flow", "--config", path], tmp_path, "a")[1]
    b = run(["flow", "--config", path], tmp_path, "b")[1]
    for f in ("trace.csv", "summary.json"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_toml_and_json_agree(config_dir, tmp_path):
    code_t, out_t = run(["criterion", "--config", str(config_dir / "gaussian.toml")], tmp_path, "t")
    code_j, out_j = run(["criterion", "--config", write(tmp_path, shipped("gaussian.toml"))],
                        tmp_path, "j")
    assert code_t == code_j == 0
    assert (out_t / "criterion.json").read_bytes() == (out_j / "criterion.json").read_bytes()


def test_env_overrides_out(config_dir, tmp_path, monkeypatch):
    env_out = tmp_path / "env"
    monkeypatch.setenv("OTLAB_OUT", str(env_out))
    code, out = run(["criterion", "--config", str(config_dir / "gaussian.toml")], tmp_path)
    assert code == 0
    assert (env_out / "criterion.json").exists() and not out.exists()


@pytest.mark.parametrize("p,code", [(3.0, 0), (2.0, 0), (5.0, 0), (1.5, 2)])
def test_ppower_command(p, code, tmp_path):
    got, out = run(["ppower", "--p", str(p)], tmp_path)
    assert got == code
    if code == 0:
        rep = json.loads((out / "ppower.json").read_text())
        assert rep["C"] >= rep["bound_2_2mp_over_p"] - 1e-12
        if p == 3.0:
            assert rep["C"] == pytest.approx((2 - 2**0.5) / 3, abs=1e-10)
            assert rep["t_p"] == pytest.approx(2**-0.5 - 1, abs=1e-10)
        if p == 5.0:
            assert rep["bound_2_2mp_over_p"] == pytest.approx(0.025)


@pytest.mark.parametrize("cmd,name", [("transport", "transport.toml"),
                                      ("five-gradients", "five_gradients.toml"),
                                      ("lsi-gap", "lsi_gap.toml"),
                                      ("theta-lsi", "theta_lsi.toml")])
def test_other_commands(cmd, name, config_dir, tmp_path):
    code, out = run([cmd, "--config", str(config_dir / name)], tmp_path)
    assert code == 0
    assert any(out.glob("*.json"))


def test_step_triples_with_oracle(config_dir, tmp_path):
    code, out = run(["step", "--config", str(config_dir / "jko_triples.toml"), "--oracle"],
                    tmp_path)
    assert code == 0
    cases = json.loads((out / "steps.json").read_text())["cases"]
    assert len(cases) == 10 and all(c["oracle_distance"] <= 1e-3 for c in cases)


def test_sweep(config_dir, tmp_path):
    code, out = run(["criterion", "--config", str(config_dir / "ppower3.toml"),
                     "--sweep", "cost.tau+ppower.tau=1.0,1.5", "--jobs", "2"], tmp_path)
    # tau = 1 is below the threshold, so the sweep reports the worst exit code
    assert code == 1
    index = json.loads((out / "sweep.json").read_text())
    assert index["exit_codes"] == [1, 0]
    assert (out / "cost.tau+ppower.tau=1.5" / "criterion.json").exists()


def test_parse_sweep():
    keys, vals = parse_sweep("a.b+c=1,2.5,x")
    assert keys == ["a.b", "c"] and vals == [1, 2.5, "x"]
    with pytest.raises(ConfigError):
        parse_sweep("novalue")


def test_experiment_config_builders(config_dir):
    exp = ExperimentConfig.from_dict(shipped("gaussian.toml"))
    assert exp.name == "gaussian" and exp.grid.n == 401
    n, cfg = exp.flow_settings()
    assert n == 200 and cfg.relaxation == 0.5
    assert exp.initial().mass() == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"grid": {"a": 0, "b": 1, "n": 32}})
