import csv
import json

import numpy as np
import pytest

from ccq import harness
from ccq.exceptions import SizeLimitError, ValidationError
from ccq.mdp import random_mdp, save_mdp


def small_config(tmp_path, **extra):
    doc = {
        "schema_version": 1,
        "model": {"kind": "mimo", "params": {"queue_levels": 5}},
        "family": {"k_total": 4},
        "algorithm": {"k": 2, "schedule": {"max_steps_per_state": 200, "lr_power": 0.65}},
        "tracking": {"pairs": [[3, 1]], "states": [3], "stride": 16},
        "seeds": [0, 1],
        "output": str(tmp_path / "out"),
    }
    for key, value in extra.items():
        doc[key] = {**doc.get(key, {}), **value} if isinstance(value, dict) else value
    return harness.load_config(doc, environ={})


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_one_point_two_seeds(tmp_path):
    cfg = small_config(tmp_path)
    manifest = harness.run_experiment(cfg)
    runs = sorted(p.name for p in (cfg.output / "runs").iterdir())
    assert runs == ["p000_s0", "p000_s1"]
    rows = _rows(cfg.output / "aggregate.csv")
    assert [r["seed"] for r in rows] == ["0", "1"]
    assert all(r["status"] == "ok" for r in rows) and manifest["failed"] == 0
    for name in ("q.csv", "ape.csv", "ordering.csv", "coverage.csv", "lambda.csv"):
        assert (cfg.output / "runs" / "p000_s0" / name).exists()
    saved = json.loads((cfg.output / "manifest.json").read_text())
    assert saved["config_hash"] == cfg.hash and saved["seeds"] == [0, 1]
    assert {"ccq", "numpy", "numba", "python"} <= set(saved["versions"])


def test_rerun_is_byte_identical(tmp_path):
    cfg = small_config(tmp_path)
    harness.run_experiment(cfg)
    first = (cfg.output / "aggregate.csv").read_bytes()
    harness.run_experiment(cfg)
    assert (cfg.output / "aggregate.csv").read_bytes() == first


@pytest.mark.parametrize("algorithm", ["single-q", "double-q", "neql-fixed-members"])
def test_other_algorithms(tmp_path, algorithm):
    cfg = small_config(tmp_path, algorithm={"name": algorithm, "members": [1, 3]}, seeds=[0])
    manifest = harness.run_experiment(cfg)
    assert manifest["failed"] == 0


def test_sweep_grid_labels(tmp_path):
    cfg = small_config(tmp_path, sweep={"sizes": [45, 90], "u": [0.2, 0.8]}, seeds=[3])
    points = harness.sweep_points(cfg)
    assert [p.label() for p in points] == ["p000", "p001", "p002", "p003"]
    assert [(p.size, p.u) for p in points] == [(45, 0.2), (45, 0.8), (90, 0.2), (90, 0.8)]


def test_invalid_pair_stops_before_running(tmp_path):
    cfg = small_config(tmp_path, tracking={"pairs": [[500, 0]]})
    with pytest.raises(harness.ConfigError) as err:
        harness.run_experiment(cfg)
    assert err.value.path == "tracking.pairs.0"
    assert not (cfg.output / "runs").exists()


def test_stage_failure_recorded_and_sweep_continues(tmp_path):
    bad = random_mdp(4, 2, np.random.default_rng(0))
    save_mdp(bad, tmp_path / "m.txt")
    cfg = small_config(tmp_path, model={"kind": "file", "path": str(tmp_path / "missing.txt")},
                       tracking={"pairs": [], "states": []})
    with pytest.raises(OSError):
        harness.run_experiment(cfg)
    cfg = small_config(tmp_path, model={"kind": "file", "path": str(tmp_path / "m.txt")},
                       tracking={"pairs": [], "states": []},
                       algorithm={"schedule": {"max_steps_per_state": 50, "lr_power": 0.65,
                                               "min_visits": 10 ** 6}})
    manifest = harness.run_experiment(cfg)
    assert manifest["failed"] == 0


@pytest.mark.parametrize("doc_patch, path", [
    ({"algorithm": {"u": 1.5}}, "algorithm.u"),
    ({"model": {"kind": "quantum"}}, "model.kind"),
    ({"seeds": []}, "seeds"),
    ({"tracking": {"pairs": [[1, 2, 3]]}}, "tracking.pairs.0"),
    ({"algorithm": {"k": 9}}, "algorithm.k"),
    ({"algorithm": {"schedule": {"lr_power": 0.4}}}, "algorithm.schedule.lr_power"),
])
def test_schema_errors_are_path_addressed(tmp_path, doc_patch, path):
    with pytest.raises(harness.ConfigError) as err:
        small_config(tmp_path, **doc_patch)
    assert err.value.path == path
    assert str(err.value).startswith(path + ":")


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ValidationError):
        small_config(tmp_path, extra_section={"x": 1})


def test_overrides_and_seed_env(tmp_path):
    base = {"schema_version": 1, "model": {"kind": "miso"}, "seeds": [0, 1, 2], "output": "o"}
    cfg = harness.load_config(base, ["algorithm.u=0.8", "family.k_total=6"], environ={})
    assert cfg.section("algorithm")["u"] == 0.8 and cfg.section("family")["k_total"] == 6
    assert harness.load_config(base, environ={"CCQ_SEED": "17"}).seeds == [17]
    assert harness.load_config(base, ["seeds=[4]"], environ={"CCQ_SEED": "17"}).seeds == [4]
    with pytest.raises(harness.ConfigError):
        harness.load_config(base, environ={"CCQ_SEED": "x"})


def test_yaml_source_and_presets(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("schema_version: 1\nmodel: {kind: miso}\nseeds: [1]\noutput: out\n")
    assert harness.load_config(path, environ={}).section("model")["kind"] == "miso"
    for name in harness.PRESETS:
        cfg = harness.load_config(preset=name, environ={})
        n_states, n_actions = harness.model_size(cfg.section("model"))
        harness.check_desk_scale(n_states, n_actions)
        assert cfg.section("algorithm")["u"] == 0.5 and cfg.section("family")["k_total"] == 10


def test_config_hash_is_stable(tmp_path):
    assert small_config(tmp_path).hash == small_config(tmp_path).hash
    assert small_config(tmp_path).hash != small_config(tmp_path, seeds=[9]).hash


def test_desk_guard_gives_sizing_hint():
    harness.check_desk_scale(2000, 2)
    with pytest.raises(SizeLimitError, match=r"\|S\| <= 2236"):
        harness.check_desk_scale(2500, 2)


def test_figure_guard(tmp_path):
    cfg = small_config(tmp_path, model={"kind": "random", "params": {"n_states": 3000}},
                       tracking={"pairs": [[0, 0]], "states": []})
    with pytest.raises(SizeLimitError):
        harness.reproduce_figure("cc_vs_order", cfg)


def test_scaled_sizes():
    assert harness.model_size({"kind": "mimo", "params": {}}, 400) == (396, 2)
    assert harness.model_size({"kind": "miso", "params": {}}, 900) == (900, 2)


def test_figures(tmp_path):
    cfg = small_config(tmp_path, sweep={"sizes": [45, 90]},
                       figure={"algorithms": ["ccq", "double-q"]})
    ape = _rows(harness.reproduce_figure("ape_vs_size", cfg))
    assert [r["size_target"] for r in ape] == ["45", "90"]
    assert {"ape_ccq", "ape_double_q", "ape_ccq_sd"} <= set(ape[0])

    cc = _rows(harness.reproduce_figure("cc_vs_order", cfg))
    assert list(cc[0]) == ["t", "C_n1", "C_n2", "C_n3", "C_n4"]

    env = _rows(harness.reproduce_figure("logcc_bound_env", cfg))
    for order in {r["env_order"] for r in env}:
        rows = [r for r in env if r["env_order"] == order]
        assert len({r["e_bound"] for r in rows}) == 1
        assert len({r["logC"] for r in rows}) > 1

    ens = _rows(harness.reproduce_figure("logcc_bound_ensemble", cfg))
    assert {r["env_order"] for r in ens} == {"0"}


def test_unknown_figure(tmp_path):
    with pytest.raises(harness.ConfigError):
        harness.reproduce_figure("nope", small_config(tmp_path))


def test_order_output(tmp_path):
    path, result = harness.run_order(small_config(tmp_path, algorithm={"alpha": 0.5}))
    assert result.ranking[0] == 1 and path.exists()


def test_parallel_workers_match_serial(tmp_path):
    serial = small_config(tmp_path / "a")
    harness.run_experiment(serial)
    parallel = small_config(tmp_path / "b")
    harness.run_experiment(parallel, workers=2)
    strip = lambda p: [{k: v for k, v in r.items()} for r in _rows(p)]  # noqa: E731
    assert strip(serial.output / "aggregate.csv") == strip(parallel.output / "aggregate.csv")
