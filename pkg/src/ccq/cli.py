"""Command-line entry point: ``ccq <subcommand> [CONFIG] [--set key=value ...]``.

Every subcommand reads the same config document (or a ``--preset``), applies
``--set`` overrides and honours ``CCQ_SEED``.  Exit status is nonzero iff a
stage failed.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import harness
from .coverage import cc_star, coverage_coefficient
from .exceptions import StageError, ValidationError
from .mdp import average_policy_error, greedy_policy, save_mdp, value_iteration
from .synthesis import build_family, cost_bounds


def _config(config_path, preset, overrides) -> harness.ExperimentConfig:
    if config_path is None and preset is None:
        raise click.UsageError("give a CONFIG file or --preset")
    return harness.load_config(config_path, overrides, preset=preset)


def _common(fn):
    fn = click.option("--set", "-s", "overrides", multiple=True, metavar="KEY=VALUE",
                      help="Override a config key, e.g. -s algorithm.u=0.8 (repeatable).")(fn)
    fn = click.option("--preset", type=click.Choice(sorted(harness.PRESETS)), default=None,
                      help="Start from a built-in desk-scale config.")(fn)
    fn = click.argument("config_path", required=False, type=click.Path(exists=True, dir_okay=False))(fn)
    return fn


def _read_q(path: str, n_states: int, n_actions: int) -> np.ndarray:
    q = np.full((n_states, n_actions), np.nan)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    for s, a, v in data:
        q[int(s), int(a)] = v
    if np.isnan(q).any():
        raise ValidationError(f"{path}: Q table is missing entries")
    return q


@click.group()
@click.version_option(package_name="ccq")
def main():
    """Coverage-based ensemble Q-learning experiments."""


@main.command("build-model")
@_common
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Model file (default: <output>/model.txt).")
def build_model_cmd(config_path, preset, overrides, out):
    """Build the configured model, save it and write the n-hop family manifest."""
    cfg = _config(config_path, preset, overrides)
    base = harness.build_model(cfg.section("model"))
    harness.check_desk_scale(base.n_states, base.n_actions)
    cfg.output.mkdir(parents=True, exist_ok=True)
    path = Path(out) if out else cfg.output / "model.txt"
    save_mdp(base, path)
    family = build_family(base, cfg.section("family")["k_total"])
    family.write_manifest(cfg.output / "family.json")
    c_min, c_max = cost_bounds(base)
    click.echo(f"{path}: {base.n_states} states, {base.n_actions} actions, "
               f"cost range [{c_min:g}, {c_max:g}]")


@main.command()
@_common
def order(config_path, preset, overrides):
    """Rank environment orders with the pairwise threshold rule."""
    cfg = _config(config_path, preset, overrides)
    path, result = harness.run_order(cfg)
    click.echo(f"alpha={result.alpha_used:.4f} threshold={result.threshold_used:.4f}")
    click.echo("ranking: " + " ".join(map(str, result.ranking)))
    click.echo(f"wrote {path}")


@main.command()
@_common
@click.option("--workers", type=int, default=None, help="Parallel worker processes.")
def train(config_path, preset, overrides, workers):
    """Run the configured algorithm over every sweep point and seed."""
    cfg = _config(config_path, preset, overrides)
    manifest = harness.run_experiment(cfg, workers=workers)
    for rec in manifest["runs"]:
        if rec["status"] != "ok":
            click.echo(f"{rec['run_dir']}: failed in {rec['failed_stage']}: {rec['error']}", err=True)
    total = len(manifest["runs"])
    click.echo(f"{total - manifest['failed']}/{total} runs ok; results in {cfg.output}")
    sys.exit(1 if manifest["failed"] else 0)


@main.command()
@_common
@click.option("--q", "q_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Q table CSV with columns s,a,q (as written by 'train').")
def evaluate(config_path, preset, overrides, q_path):
    """Compare a learned Q table with the exact solution of the configured model."""
    cfg = _config(config_path, preset, overrides)
    base = harness.build_model(cfg.section("model"))
    q = _read_q(q_path, base.n_states, base.n_actions)
    q_star, _, pi_star = value_iteration(base)
    report = {
        "ape": average_policy_error(greedy_policy(q), pi_star),
        "max_abs_error": float(np.max(np.abs(q - q_star))),
        "n_states": base.n_states,
    }
    click.echo(json.dumps(report, sort_keys=True))


@main.command()
@_common
@click.option("--q", "q_path", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Q table CSV with columns s,a,q.")
def coverage(config_path, preset, overrides, q_path):
    """Coverage coefficients of a Q table's greedy policy; writes coverage_states.csv."""
    cfg = _config(config_path, preset, overrides)
    base = harness.build_model(cfg.section("model"))
    q = _read_q(q_path, base.n_states, base.n_actions)
    pi = greedy_policy(q)
    states = cfg.section("tracking")["states"] or range(base.n_states)
    cfg.output.mkdir(parents=True, exist_ok=True)
    path = cfg.output / "coverage_states.csv"
    harness._write_rows(path, ("s", "a", "C"),
                        ((s, int(pi[s]), repr(coverage_coefficient(q, pi, s, int(pi[s]))))
                         for s in states))
    click.echo(f"C* = {cc_star(q, pi, [(s, int(pi[s])) for s in states]):.6g}; wrote {path}")


@main.command("reproduce-figure")
@click.argument("name", type=click.Choice(harness.FIGURES))
@_common
def reproduce_figure_cmd(name, config_path, preset, overrides):
    """Write the plot-ready CSV for one figure."""
    cfg = _config(config_path, preset, overrides)
    path = harness.reproduce_figure(name, cfg)
    click.echo(f"wrote {path}")


@main.command()
@click.option("--only", default=None, help="Comma-separated criterion numbers, e.g. 1,2,9.")
def acceptance(only):
    """Run the acceptance suite and print one pass/fail line per criterion."""
    from .acceptance import run_all

    ids = None if only is None else [int(x) for x in only.split(",") if x.strip()]
    results = run_all(ids, echo=click.echo)
    sys.exit(0 if all(r.passed for r in results) else 1)


def run():
    try:
        main(standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except (ValidationError, StageError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    run()
