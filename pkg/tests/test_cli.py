import json

import pytest
import yaml
from click.testing import CliRunner

from ccq.cli import main, run
from ccq.mdp import load_mdp


@pytest.fixture
def config_file(tmp_path):
    doc = {
        "schema_version": 1,
        "model": {"kind": "mimo", "params": {"queue_levels": 4}},
        "family": {"k_total": 4},
        "algorithm": {"k": 2, "schedule": {"max_steps_per_state": 200, "lr_power": 0.65}},
        "tracking": {"pairs": [[2, 1]], "states": [2], "stride": 16},
        "seeds": [0],
        "output": str(tmp_path / "out"),
    }
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


def invoke(*args, env=None):
    return CliRunner().invoke(main, [str(a) for a in args], env=env or {"CCQ_SEED": ""})


def test_build_model(config_file, tmp_path):
    res = invoke("build-model", config_file)
    assert res.exit_code == 0, res.output
    assert load_mdp(tmp_path / "out" / "model.txt").n_states == 36
    assert json.loads((tmp_path / "out" / "family.json").read_text())["members"][3]["order"] == 4


def test_order_and_override(config_file):
    res = invoke("order", config_file, "-s", "algorithm.alpha=0.5")
    assert res.exit_code == 0, res.output
    assert "alpha=0.5000" in res.output and "ranking: 1 " in res.output


def test_train_evaluate_coverage(config_file, tmp_path):
    assert invoke("train", config_file).exit_code == 0
    q_csv = tmp_path / "out" / "runs" / "p000_s0" / "q.csv"
    res = invoke("evaluate", config_file, "--q", q_csv)
    assert res.exit_code == 0, res.output
    report = json.loads(res.output)
    assert 0.0 <= report["ape"] <= 1.0 and report["n_states"] == 36
    res = invoke("coverage", config_file, "--q", q_csv)
    assert res.exit_code == 0, res.output
    lines = (tmp_path / "out" / "coverage_states.csv").read_text().splitlines()
    assert lines[0] == "s,a,C" and len(lines) == 2


def test_reproduce_figure_is_deterministic(config_file, tmp_path):
    assert invoke("reproduce-figure", "cc_vs_order", config_file).exit_code == 0
    first = (tmp_path / "out" / "cc_vs_order.csv").read_bytes()
    assert invoke("reproduce-figure", "cc_vs_order", config_file).exit_code == 0
    assert (tmp_path / "out" / "cc_vs_order.csv").read_bytes() == first


def test_seed_environment_variable(config_file, tmp_path):
    res = invoke("train", config_file, env={"CCQ_SEED": "7"})
    assert res.exit_code == 0, res.output
    assert (tmp_path / "out" / "runs" / "p000_s7").is_dir()


def test_preset(tmp_path):
    res = invoke("order", "--preset", "mimo-desk", "-s", f"output={tmp_path / 'p'}")
    assert res.exit_code == 0, res.output


def test_missing_config_is_usage_error():
    assert invoke("order").exit_code == 2


@pytest.mark.parametrize("args, message", [
    (["-s", "algorithm.u=2"], "algorithm.u"),
    (["-s", "tracking.pairs=[[999, 0]]"], "tracking.pairs.0"),
])
def test_run_maps_validation_errors_to_exit_2(monkeypatch, capsys, config_file, args, message):
    monkeypatch.setattr("sys.argv", ["ccq", "train", str(config_file), *args])
    with pytest.raises(SystemExit) as exc:
        run()
    assert exc.value.code == 2
    assert message in capsys.readouterr().err


def test_train_failure_exit_status(config_file, tmp_path):
    res = invoke("train", config_file, "-s", "model={kind: random, params: {n_states: 5, bogus: 1}}",
                 "-s", "tracking.pairs=[]", "-s", "tracking.states=[]")
    assert res.exit_code == 1
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["runs"][0]["failed_stage"] == "model"


def test_acceptance_subset():
    res = invoke("acceptance", "--only", "2")
    assert res.exit_code == 0, res.output
    assert res.output.startswith("[PASS] criterion 2")
