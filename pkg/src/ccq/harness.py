"""Configuration-driven experiment runner.

A config is one YAML or JSON document (``schema_version: 1``) with the
sections ``model``, ``family``, ``algorithm``, ``tracking``, ``sweep``,
``figure``, ``seeds`` and ``output``.  Schema violations raise
:class:`ConfigError` whose ``path`` is the dotted location of the bad key.

Every run draws all of its randomness from ``numpy.random.default_rng(seed)``,
so the same config and seeds reproduce byte-identical CSVs.  Sweep points share
seeds (common random numbers), which keeps algorithm comparisons paired.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Any, Mapping, Sequence

import jsonschema
import numpy as np
import yaml

from .coverage import bound_prop1, bound_prop2, estimate_lambda, estimate_theta, state_pairs
from .ensemble import EnsembleConfig, run_ensemble
from .exceptions import SizeLimitError, StageError, ValidationError
from .mdp import TabularMdp, average_policy_error, greedy_policy, load_mdp, random_mdp, value_iteration
from .ordering import ccq, default_tracked_pairs, order_environments
from .qlearning import LearningSchedule, TraceSpec, QAgent
from .synthesis import build_family, cost_bounds
from .wireless import MimoParams, MisoParams, build_mimo, build_miso

SCHEMA_VERSION = 1
SEED_ENV = "CCQ_SEED"
MAX_TENSOR_ENTRIES = 10 ** 7
ALGORITHMS = ("ccq", "neql-fixed-members", "single-q", "double-q")
FIGURES = ("ape_vs_size", "cc_vs_order", "logcc_bound_env", "logcc_bound_ensemble")


class ConfigError(ValidationError):
    """A config value is invalid; ``path`` locates it (``"algorithm.u"``)."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


_PROB = {"type": "number", "minimum": 0, "maximum": 1}
_COUNT = {"type": "integer", "minimum": 1}

_SCHEDULE = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "learning_rate": {"type": ["number", "null"], "exclusiveMinimum": 0, "maximum": 1},
        "lr_power": {"type": "number", "exclusiveMinimum": 0.5, "maximum": 1},
        "epsilon": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "epsilon_min": _PROB,
        "epsilon_decay": _PROB,
        "trajectory_length": _COUNT,
        "min_visits": _COUNT,
        "max_steps": _COUNT,
        "max_steps_per_state": {"type": ["integer", "null"], "minimum": 1},
    },
}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "model", "seeds", "output"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["miso", "mimo", "random", "file"]},
                "params": {"type": "object"},
                "path": {"type": "string"},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "family": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"k_total": {"type": "integer", "minimum": 2}},
        },
        "algorithm": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"enum": list(ALGORITHMS)},
                "k": _COUNT,
                "u": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "alpha": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                "redraw_alpha": {"type": "boolean"},
                "members": {"type": ["array", "null"], "items": _COUNT, "minItems": 1},
                "fusion_period": _COUNT,
                "equal_budget": {"type": "boolean"},
                "schedule": _SCHEDULE,
            },
        },
        "tracking": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "pairs": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "integer"},
                              "minItems": 2, "maxItems": 2},
                },
                "states": {"type": "array", "items": {"type": "integer"}},
                "stride": _COUNT,
                "rows": _COUNT,
                "burn_in": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "log_every": _COUNT,
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "k": {"type": "array", "items": _COUNT, "minItems": 1},
                "u": {"type": "array", "minItems": 1,
                      "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
            },
        },
        "figure": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "algorithms": {"type": "array", "items": {"enum": list(ALGORITHMS)}, "minItems": 1},
                "orders": _COUNT,
                "order": _COUNT,
            },
        },
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "output": {"type": "string", "minLength": 1},
        "workers": _COUNT,
    },
}

DEFAULTS: dict[str, Any] = {
    "family": {"k_total": 10},
    "algorithm": {
        "name": "ccq",
        "k": 5,
        "u": 0.5,
        "alpha": None,
        "redraw_alpha": False,
        "members": None,
        "fusion_period": 64,
        "equal_budget": True,
        "schedule": {},
    },
    "tracking": {"pairs": [], "states": [], "stride": 1, "burn_in": 0.5, "log_every": 16},
    "sweep": {},
    "figure": {"algorithms": ["ccq", "double-q"]},
    "workers": 1,
}

# Desk-scale presets: gamma 0.95, u 0.5, K 5 of 10, two actions.  The 0.65
# step-size exponent converges far faster than the library default at gamma
# 0.95, which matters for anything that measures errors against Q*.
PRESET_SCHEDULE = {"lr_power": 0.65, "min_visits": 100, "max_steps_per_state": 1000}

PRESETS: dict[str, dict[str, Any]] = {
    "miso-desk": {
        "schema_version": SCHEMA_VERSION,
        "model": {"kind": "miso", "params": {"discount": 0.95}},
        "algorithm": {"name": "ccq", "k": 5, "u": 0.5, "schedule": dict(PRESET_SCHEDULE)},
        "family": {"k_total": 10},
        "tracking": {"states": [6], "stride": 64},
        "seeds": [0, 1, 2],
        "output": "runs/miso-desk",
    },
    "mimo-desk": {
        "schema_version": SCHEMA_VERSION,
        "model": {"kind": "mimo", "params": {"queue_levels": 22, "discount": 0.95}},
        "algorithm": {"name": "ccq", "k": 5, "u": 0.5, "schedule": dict(PRESET_SCHEDULE)},
        "family": {"k_total": 10},
        "tracking": {"pairs": [[6, 1]], "states": [4, 6], "stride": 64},
        "sweep": {"sizes": [100, 400, 900]},
        "seeds": [0, 1, 2],
        "output": "runs/mimo-desk",
    },
}


def _merge(base: dict, extra: Mapping) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _set_path(doc: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = doc
    for key in keys[:-1]:
        child = node.get(key)
        if child is None:
            child = node[key] = {}
        if not isinstance(child, dict):
            raise ConfigError(dotted, f"'{key}' is not a section")
        node = child
    node[keys[-1]] = value


def apply_overrides(doc: dict, overrides: Sequence[str]) -> dict:
    """Apply ``key.path=value`` strings; values are parsed as YAML scalars/lists."""
    doc = copy.deepcopy(doc)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError("", f"override {item!r} is not of the form key.path=value")
        _set_path(doc, key.strip(), yaml.safe_load(raw))
    return doc


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated config document with defaults filled in."""

    raw: Mapping[str, Any]

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ExperimentConfig":
        validator = jsonschema.Draft202012Validator(SCHEMA)
        errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
        if errors:
            err = errors[0]
            raise ConfigError(".".join(map(str, err.absolute_path)), err.message)
        full = _merge(DEFAULTS, doc)
        if full["algorithm"]["name"] == "ccq" and full["algorithm"]["k"] > full["family"]["k_total"]:
            raise ConfigError("algorithm.k", "must not exceed family.k_total")
        members = full["algorithm"]["members"]
        if members is not None and len(set(members)) != len(members):
            raise ConfigError("algorithm.members", "duplicate environment orders")
        if full["model"]["kind"] == "file" and "path" not in full["model"]:
            raise ConfigError("model.path", "required when model.kind is 'file'")
        _check_schedule(full["algorithm"]["schedule"])
        return cls(full)

    @property
    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()

    def section(self, name: str) -> dict:
        return self.raw[name]

    @property
    def seeds(self) -> list[int]:
        return list(self.raw["seeds"])

    @property
    def output(self) -> Path:
        return Path(self.raw["output"])


def _check_schedule(section: Mapping) -> None:
    kwargs = {k: v for k, v in section.items() if k != "max_steps_per_state"}
    try:
        LearningSchedule(**kwargs)
    except ValidationError as exc:
        raise ConfigError("algorithm.schedule", str(exc)) from None


def load_config(source: str | Path | Mapping | None = None, overrides: Sequence[str] = (),
                preset: str | None = None, environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    """Read, override and validate a config.

    ``source`` may be a path to YAML/JSON or an already-parsed mapping.  The
    ``CCQ_SEED`` environment variable, when set, replaces ``seeds`` with that
    single seed; explicit ``--set seeds=...`` overrides still win.
    """
    doc: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        doc = copy.deepcopy(PRESETS[preset])
    if isinstance(source, Mapping):
        doc = _merge(doc, source)
    elif source is not None:
        text = Path(source).read_text()
        loaded = yaml.safe_load(text) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("", f"{source}: top level must be a mapping")
        doc = _merge(doc, loaded)
    env = os.environ if environ is None else environ
    if env.get(SEED_ENV):
        try:
            doc["seeds"] = [int(env[SEED_ENV])]
        except ValueError:
            raise ConfigError("seeds", f"{SEED_ENV}={env[SEED_ENV]!r} is not an integer") from None
    return ExperimentConfig.from_dict(apply_overrides(doc, overrides))


# -- models -----------------------------------------------------------------

def _scaled_params(kind: str, params: Mapping, size: int | None) -> dict:
    """Adjust the one level count that scales a wireless model toward ``size`` states."""
    params = dict(params)
    if size is None:
        return params
    if kind == "mimo":
        proto = MimoParams(**params)
        per_queue = proto.channel_states ** proto.antenna_count
        params["queue_levels"] = max(1, round(size / per_queue))
    elif kind == "miso":
        proto = MisoParams(**params)
        per_buffer = proto.battery_levels * proto.relay_levels ** proto.relay_count
        params["buffer_levels"] = max(1, round(size / per_buffer))
    elif kind == "random":
        params["n_states"] = size
    return params


def model_size(model: Mapping, size: int | None = None) -> tuple[int, int]:
    """``(n_states, n_actions)`` of the model a config describes, without building it."""
    kind = model["kind"]
    params = _scaled_params(kind, model.get("params", {}), size)
    try:
        if kind == "miso":
            return MisoParams(**params).n_states, 2
        if kind == "mimo":
            return MimoParams(**params).n_states, 2
        if kind == "random":
            return int(params.get("n_states", 20)), int(params.get("n_actions", 2))
    except TypeError as exc:
        raise ConfigError("model.params", str(exc)) from None
    mdp = load_mdp(model["path"])
    return mdp.n_states, mdp.n_actions


def build_model(model: Mapping, size: int | None = None) -> TabularMdp:
    kind = model["kind"]
    params = _scaled_params(kind, model.get("params", {}), size)
    try:
        if kind == "miso":
            return build_miso(MisoParams(**params))
        if kind == "mimo":
            return build_mimo(MimoParams(**params))
        if kind == "random":
            n = int(params.pop("n_states", 20))
            a = int(params.pop("n_actions", 2))
            rng = np.random.default_rng(model.get("seed", 0))
            if "cost_range" in params:
                params["cost_range"] = tuple(params["cost_range"])
            return random_mdp(n, a, rng, **params)
    except TypeError as exc:
        raise ConfigError("model.params", str(exc)) from None
    return load_mdp(model["path"])


def check_desk_scale(n_states: int, n_actions: int, where: str = "model") -> None:
    entries = n_states * n_states * n_actions
    if entries > MAX_TENSOR_ENTRIES:
        fit = int(math.isqrt(MAX_TENSOR_ENTRIES // n_actions))
        raise SizeLimitError(
            f"{where}: {n_states} states x {n_actions} actions means {entries:,} transition "
            f"entries (limit {MAX_TENSOR_ENTRIES:,}); keep |S| <= {fit} at |A| = {n_actions}"
        )


# -- runs -------------------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    index: int
    size: int | None
    k: int
    u: float

    def label(self) -> str:
        return f"p{self.index:03d}"


def sweep_points(cfg: ExperimentConfig) -> list[SweepPoint]:
    sweep, alg = cfg.section("sweep"), cfg.section("algorithm")
    sizes = sweep.get("sizes") or [None]
    ks = sweep.get("k") or [alg["k"]]
    us = sweep.get("u") or [alg["u"]]
    return [SweepPoint(i, s, k, u) for i, (s, k, u) in enumerate(product(sizes, ks, us))]


def validate_tracking(cfg: ExperimentConfig) -> None:
    """Check tracked pairs/states against every sweep point before anything runs."""
    track = cfg.section("tracking")
    for point in sweep_points(cfg):
        n_states, n_actions = model_size(cfg.section("model"), point.size)
        for i, (s, a) in enumerate(track["pairs"]):
            if not (0 <= s < n_states and 0 <= a < n_actions):
                raise ConfigError(f"tracking.pairs.{i}",
                                  f"({s}, {a}) is out of range for {n_states} states x {n_actions} actions")
        for i, s in enumerate(track["states"]):
            if not 0 <= s < n_states:
                raise ConfigError(f"tracking.states.{i}", f"state {s} is out of range for {n_states} states")
        if point.k > cfg.section("family")["k_total"] and cfg.section("algorithm")["name"] == "ccq":
            raise ConfigError("sweep.k", f"K={point.k} exceeds family.k_total")


def schedule_for(section: Mapping, n_states: int, scale: int = 1) -> LearningSchedule:
    kwargs = {k: v for k, v in section.items() if k != "max_steps_per_state"}
    per_state = section.get("max_steps_per_state")
    if per_state:
        kwargs["max_steps"] = per_state * n_states
    kwargs["max_steps"] = kwargs.get("max_steps", LearningSchedule.max_steps) * scale
    return LearningSchedule(**kwargs)


def _tracked(track: Mapping, n_states: int, n_actions: int) -> tuple[tuple[int, int], ...]:
    pairs = list(state_pairs(track["states"], n_actions))
    pairs += [tuple(p) for p in track["pairs"] if tuple(p) not in pairs]
    if not pairs:
        pairs = list(default_tracked_pairs(n_states, n_actions, limit=64))
    return tuple((int(s), int(a)) for s, a in pairs)


def _stride(track: Mapping, schedule: LearningSchedule) -> int:
    if "rows" in track:
        return max(1, schedule.max_steps // track["rows"])
    return track["stride"]


def run_algorithm(name: str, base: TabularMdp, alg: Mapping, track: Mapping, k: int, u: float,
                  k_total: int, rng: np.random.Generator, q_star: np.ndarray | None) -> dict:
    """Run one configured algorithm; returns tables, traces and diagnostics."""
    pairs = _tracked(track, base.n_states, base.n_actions)
    if name in ("single-q", "double-q"):
        schedule = schedule_for(alg["schedule"], base.n_states, k if alg["equal_budget"] else 1)
        spec = TraceSpec(pairs=pairs, stride=_stride(track, schedule), snapshots=True)
        agent = QAgent(base, schedule, rng, spec, double=name == "double-q").run()
        q = agent.q.copy()
        trace = agent.trace()
        ape_curve = []
        if q_star is not None:
            pi_star = greedy_policy(q_star)
            ape_curve = [(t, average_policy_error(greedy_policy(snap), pi_star)) for t, snap in trace.snapshots]
        return {"q": q, "policy": greedy_policy(q), "traces": {1: trace}, "ordering": None,
                "coverage": None, "members": (1,), "ape_curve": ape_curve,
                "steps": trace.steps, "incomplete": [1] if trace.deficit else []}

    schedule = schedule_for(alg["schedule"], base.n_states)
    spec = TraceSpec(pairs=pairs, stride=_stride(track, schedule), snapshots=False)
    pi_star = greedy_policy(q_star) if q_star is not None else None
    if name == "ccq":
        if alg["redraw_alpha"]:
            raise ConfigError("algorithm.redraw_alpha", "per-comparison redraws are only offered by 'order'")
        result = ccq(base, k, k_total, u, alg["alpha"], schedule, rng,
                     fusion_period=alg["fusion_period"], tracked_states=track["states"],
                     q_star=q_star, burn_in=track["burn_in"], stride=spec.stride, extra_pairs=pairs,
                     log_every=track["log_every"])
        state, ordering, coverage = result.ensemble, result.ordering, result.coverage
    else:
        members = alg["members"] or list(range(1, k + 1))
        family = build_family(base, members)
        config = EnsembleConfig(members=members, update_ratio=u, fusion_period=alg["fusion_period"])
        _, _, state = run_ensemble(family, config, schedule, rng, spec, pi_star=pi_star,
                                   log_every=track["log_every"])
        ordering, coverage = None, None
    ape_curve = []
    if state.log:
        seen = set()
        for r, _, _, ape in state.log:
            if r not in seen and not np.isnan(ape):
                ape_curve.append((r * alg["fusion_period"], ape))
                seen.add(r)
    steps = sum(t.steps for t in state.traces.values())
    return {"q": state.q_hat, "policy": state.policy, "traces": state.traces, "ordering": ordering,
            "coverage": coverage, "members": state.members, "ape_curve": ape_curve,
            "steps": steps, "incomplete": list(state.incomplete)}


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


AGGREGATE_COLUMNS = ("point", "seed", "algorithm", "model", "size_target", "n_states", "k", "u",
                     "ape", "max_abs_error", "steps", "coverage_complete", "status", "failed_stage",
                     "run_dir")


def _run_one(raw: Mapping, point: SweepPoint, seed: int, run_dir: str) -> dict:
    """One (sweep point, seed) run.  Never raises: failures land in the returned record."""
    out = Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    alg, track = raw["algorithm"], raw["tracking"]
    record = {"point": point.index, "seed": seed, "algorithm": alg["name"],
              "model": raw["model"]["kind"], "size_target": "" if point.size is None else point.size,
              "n_states": "", "k": point.k, "u": point.u, "ape": "", "max_abs_error": "",
              "steps": "", "coverage_complete": "", "status": "ok", "failed_stage": "",
              "run_dir": out.name, "error": ""}
    stage = "model"
    try:
        base = build_model(raw["model"], point.size)
        check_desk_scale(base.n_states, base.n_actions)
        record["n_states"] = base.n_states
        stage = "oracle"
        q_star = value_iteration(base)[0]
        stage = "algorithm"
        rng = np.random.default_rng(seed)
        res = run_algorithm(alg["name"], base, alg, track, point.k, point.u,
                            raw["family"]["k_total"], rng, q_star)
        stage = "evaluate"
        pi_star = greedy_policy(q_star)
        record["ape"] = _fmt(average_policy_error(res["policy"], pi_star))
        record["max_abs_error"] = _fmt(np.max(np.abs(res["q"] - q_star)))
        record["steps"] = res["steps"]
        record["coverage_complete"] = int(not res["incomplete"])
        stage = "write"
        _write_rows(out / "q.csv", ("s", "a", "q"),
                    ((s, a, _fmt(res["q"][s, a])) for s in range(base.n_states)
                     for a in range(base.n_actions)))
        _write_rows(out / "ape.csv", ("t", "ape"), ((t, _fmt(a)) for t, a in res["ape_curve"]))
        if res["ordering"] is not None:
            res["ordering"].write_csv(out / "ordering.csv")
        if res["coverage"] is not None:
            res["coverage"].write_csv(out / "coverage.csv", burn_in=track["burn_in"])
        stage = "lambda"
        rows = []
        for n, trace in sorted(res["traces"].items()):
            lam = estimate_lambda(trace, q_star, track["burn_in"])
            rows.append((n, _fmt(lam), int(trace.coverage_complete)))
        _write_rows(out / "lambda.csv", ("order", "lambda_hat", "coverage_complete"), rows)
    except Exception as exc:  # noqa: BLE001 - recorded, the sweep continues
        if isinstance(exc, StageError):
            stage, exc = f"{stage}/{exc.stage}", exc.cause
        record.update(status="failed", failed_stage=stage, error=f"{type(exc).__name__}: {exc}")
    return record


def _versions() -> dict:
    import numba

    from . import __version__

    return {"ccq": __version__, "numpy": np.__version__, "numba": numba.__version__,
            "python": platform.python_version()}


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> dict:
    """Run every (sweep point x seed); returns the manifest that is also written to disk.

    Layout under ``cfg.output``::

        runs/p000_s0/{q,ape,lambda,ordering,coverage}.csv
        aggregate.csv
        manifest.json
    """
    validate_tracking(cfg)
    root = cfg.output
    (root / "runs").mkdir(parents=True, exist_ok=True)
    jobs = [(p, s, str(root / "runs" / f"{p.label()}_s{s}"))
            for p in sweep_points(cfg) for s in cfg.seeds]
    workers = workers or cfg.raw["workers"]
    raw = dict(cfg.raw)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_one, *zip(*[(raw, p, s, d) for p, s, d in jobs])))
    else:
        records = [_run_one(raw, p, s, d) for p, s, d in jobs]

    _write_rows(root / "aggregate.csv", AGGREGATE_COLUMNS,
                ([r[c] for c in AGGREGATE_COLUMNS] for r in records))
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": cfg.hash,
        "config": cfg.raw,
        "seeds": cfg.seeds,
        "versions": _versions(),
        "runs": [{k: r[k] for k in ("run_dir", "point", "seed", "status", "failed_stage", "error")}
                 for r in records],
        "failed": sum(r["status"] != "ok" for r in records),
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# -- figures ----------------------------------------------------------------

def _figure_guard(cfg: ExperimentConfig, sizes: Sequence[int | None]) -> None:
    for size in sizes:
        n_states, n_actions = model_size(cfg.section("model"), size)
        check_desk_scale(n_states, n_actions, where=f"size {size}" if size else "model")


def _pair(cfg: ExperimentConfig) -> tuple[int, int]:
    pairs = cfg.section("tracking")["pairs"]
    if not pairs:
        raise ConfigError("tracking.pairs", "this figure needs one tracked (s, a) pair")
    return int(pairs[0][0]), int(pairs[0][1])


def _inverse_v(values: np.ndarray, a: int) -> np.ndarray:
    """``sum_k Q(s, k) / Q(s, a)`` per row: coverage when the policy picks ``a``."""
    return values.sum(axis=1) / values[:, a]


def _agent_series(env: TabularMdp, schedule: LearningSchedule, seed: int, s: int,
                  stride: int) -> tuple[np.ndarray, np.ndarray, object]:
    spec = TraceSpec(pairs=state_pairs([s], env.n_actions), stride=stride, snapshots=False)
    agent = QAgent(env, schedule, np.random.default_rng(seed), spec).run()
    trace = agent.trace()
    return trace.times, trace.values, trace


def _truncate(series: list[np.ndarray]) -> list[np.ndarray]:
    n = min(len(x) for x in series)
    return [x[:n] for x in series]


def _fig_ape_vs_size(cfg: ExperimentConfig) -> tuple[list[str], list[list]]:
    sizes = cfg.section("sweep").get("sizes")
    if not sizes:
        raise ConfigError("sweep.sizes", "ape_vs_size needs a list of state-space sizes")
    _figure_guard(cfg, sizes)
    alg, track = cfg.section("algorithm"), cfg.section("tracking")
    algorithms = cfg.section("figure")["algorithms"]
    header = ["size_target", "n_states"]
    for name in algorithms:
        col = name.replace("-", "_")
        header += [f"ape_{col}", f"ape_{col}_sd"]
    rows = []
    for size in sizes:
        base = build_model(cfg.section("model"), size)
        q_star = value_iteration(base)[0]
        pi_star = greedy_policy(q_star)
        row = [size, base.n_states]
        for name in algorithms:
            apes = []
            for seed in cfg.seeds:
                res = run_algorithm(name, base, alg, {**track, "states": [], "pairs": []}, alg["k"],
                                    alg["u"], cfg.section("family")["k_total"],
                                    np.random.default_rng(seed), q_star)
                apes.append(average_policy_error(res["policy"], pi_star))
            row += [_fmt(np.mean(apes)), _fmt(np.std(apes))]
        rows.append(row)
    return header, rows


def _fig_cc_vs_order(cfg: ExperimentConfig) -> tuple[list[str], list[list]]:
    _figure_guard(cfg, [None])
    s, a = _pair(cfg)
    base = build_model(cfg.section("model"))
    orders = cfg.section("figure").get("orders", cfg.section("family")["k_total"])
    family = build_family(base, orders)
    schedule = schedule_for(cfg.section("algorithm")["schedule"], base.n_states)
    stride = _stride(cfg.section("tracking"), schedule)
    columns, times = [], None
    for n in range(1, orders + 1):
        per_seed = []
        for seed in cfg.seeds:
            t, values, _ = _agent_series(family[n], schedule, seed, s, stride)
            per_seed.append(_inverse_v(values, a))
            times = t if times is None or len(t) < len(times) else times
        columns.append(np.mean(_truncate(per_seed), axis=0))
    columns = _truncate(columns)
    header = ["t"] + [f"C_n{n}" for n in range(1, orders + 1)]
    rows = [[int(times[i])] + [_fmt(c[i]) for c in columns] for i in range(len(columns[0]))]
    return header, rows


def _fig_logcc_bound(cfg: ExperimentConfig, ensemble: bool) -> tuple[list[str], list[list]]:
    _figure_guard(cfg, [None])
    s, a = _pair(cfg)
    base = build_model(cfg.section("model"))
    q_star = value_iteration(base)[0]
    theta = estimate_theta(q_star)
    alg, track = cfg.section("algorithm"), cfg.section("tracking")
    schedule = schedule_for(alg["schedule"], base.n_states)
    stride = _stride(track, schedule)
    logs, lams, times = [], [], None
    if ensemble:
        for seed in cfg.seeds:
            res = ccq(base, alg["k"], cfg.section("family")["k_total"], alg["u"], alg["alpha"],
                      schedule, np.random.default_rng(seed), fusion_period=alg["fusion_period"],
                      tracked_states=[s], burn_in=track["burn_in"], stride=stride)
            st = res.ensemble
            logs.append(np.log(_inverse_v(st.hat_values, a)))
            lams.append(max(estimate_lambda(tr, q_star, track["burn_in"]) for tr in st.traces.values()))
            times = st.hat_times
        e_bound, v_bound = bound_prop2(float(np.mean(lams)), theta, alg["u"], float(q_star[s, a]))
        order = 0
    else:
        order = cfg.section("figure").get("order", 1)
        env = build_family(base, [order])[order]
        for seed in cfg.seeds:
            t, values, trace = _agent_series(env, schedule, seed, s, stride)
            logs.append(np.log(_inverse_v(values, a)))
            lams.append(estimate_lambda(trace, q_star, track["burn_in"]))
            times = t if times is None or len(t) < len(times) else times
        e_bound, v_bound = bound_prop1(float(np.mean(lams)), theta, float(q_star[s, a]))
    mean_log = np.mean(_truncate(logs), axis=0)
    header = ["t", "s", "a", "env_order", "logC", "e_bound", "v_bound"]
    rows = [[int(times[i]), s, a, order, _fmt(mean_log[i]), _fmt(e_bound), _fmt(v_bound)]
            for i in range(len(mean_log))]
    return header, rows


def reproduce_figure(name: str, cfg: ExperimentConfig) -> Path:
    """Write the plot-ready CSV for ``name`` to ``<output>/<name>.csv``.

    Columns:
        ape_vs_size: ``size_target, n_states`` then ``ape_<alg>, ape_<alg>_sd``
            (mean and population sd over seeds) per configured algorithm;
            single learners get ``k`` times the per-member budget.
        cc_vs_order: ``t, C_n1 .. C_nK``; seed-mean ``1 / v_t(s, a)`` of the
            first tracked pair on each environment order.
        logcc_bound_env / logcc_bound_ensemble: ``t, s, a, env_order, logC,
            e_bound, v_bound``; ``logC`` is the seed mean, the bounds are
            constant (single-environment form, or ensemble form with ``u``;
            ``env_order`` is 0 for the ensemble).
    """
    builders = {
        "ape_vs_size": _fig_ape_vs_size,
        "cc_vs_order": _fig_cc_vs_order,
        "logcc_bound_env": lambda c: _fig_logcc_bound(c, ensemble=False),
        "logcc_bound_ensemble": lambda c: _fig_logcc_bound(c, ensemble=True),
    }
    if name not in builders:
        raise ConfigError("figure", f"unknown figure {name!r}; choose from {', '.join(FIGURES)}")
    validate_tracking(cfg)
    header, rows = builders[name](cfg)
    cfg.output.mkdir(parents=True, exist_ok=True)
    path = cfg.output / f"{name}.csv"
    _write_rows(path, header, rows)
    return path


def run_order(cfg: ExperimentConfig) -> tuple[Path, object]:
    """Order the configured model's environments and write ``ordering.csv``."""
    base = build_model(cfg.section("model"))
    check_desk_scale(base.n_states, base.n_actions)
    c_min, c_max = cost_bounds(base)
    alg = cfg.section("algorithm")
    rng = np.random.default_rng(cfg.seeds[0])
    result = order_environments(cfg.section("family")["k_total"], base.discount, alg["alpha"],
                                c_min, c_max, rng, redraw_alpha=alg["redraw_alpha"])
    cfg.output.mkdir(parents=True, exist_ok=True)
    path = cfg.output / "ordering.csv"
    result.write_csv(path)
    return path, result
