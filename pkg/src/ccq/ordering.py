"""Environment ordering by estimation-error scale, and the CCQ pipeline.

The pairwise rule compares environments ``n < m`` through

    f(gamma, n, m) = (1 - g^n)(1 - g^(m-1)) / ((1 - g^m)(1 - g^(n-1)))

against the threshold ``T = alpha c_max/c_min + (1 - alpha) c_min/c_max``:
``lam_n < lam_m`` iff ``f > T``.  ``f`` is infinite for ``n = 1``, so the
base environment wins every comparison without special-casing.  Pairs are
always evaluated once with ``n < m``; the verdicts are aggregated into a
total order by Copeland score (wins), ties going to the smaller order.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .coverage import (
    CoverageReport,
    attach_bounds,
    coverage_report,
    estimate_lambda,
    estimate_theta,
    state_pairs,
)
from .ensemble import EnsembleConfig, EnsembleState, run_ensemble
from .exceptions import StageError, ValidationError
from .mdp import TabularMdp, greedy_policy, value_iteration
from .qlearning import LearningSchedule, TraceSpec, train_agent
from .synthesis import EnvironmentFamily, EstimatedModel, build_family, cost_bounds


class Verdict(str, enum.Enum):
    N_SMALLER = "n_smaller"
    M_SMALLER = "m_smaller"


def f_gamma(gamma: float, n: int, m: int) -> float:
    """Ratio driving the pairwise rule; ``inf`` when ``n = 1``, ``0`` when ``m = 1``."""
    if not 0.0 < gamma < 1.0:
        raise ValidationError(f"gamma must lie in (0, 1), got {gamma!r}")
    if n < 1 or m < 1:
        raise ValidationError("orders must be >= 1")
    if n == m:
        return 1.0
    if n == 1:
        return math.inf
    if m == 1:
        return 0.0
    num = -math.expm1(n * math.log(gamma)) * -math.expm1((m - 1) * math.log(gamma))
    den = -math.expm1(m * math.log(gamma)) * -math.expm1((n - 1) * math.log(gamma))
    return num / den


def threshold(alpha: float, c_min: float, c_max: float) -> float:
    if not c_min > 0:
        raise ValidationError(f"c_min must be positive, got {c_min!r}")
    if c_max < c_min:
        raise ValidationError("c_max must be >= c_min")
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must lie in [0, 1], got {alpha!r}")
    return alpha * c_max / c_min + (1.0 - alpha) * c_min / c_max


def compare_envs(n: int, m: int, gamma: float, alpha: float, c_min: float, c_max: float) -> Verdict:
    """Which of environments ``n`` and ``m`` has the smaller error scale."""
    if n == m:
        raise ValidationError("cannot compare an environment with itself")
    lo, hi = min(n, m), max(n, m)
    lo_wins = f_gamma(gamma, lo, hi) > threshold(alpha, c_min, c_max)
    n_wins = lo_wins if n == lo else not lo_wins
    return Verdict.N_SMALLER if n_wins else Verdict.M_SMALLER


@dataclass
class OrderingResult:
    """Pairwise verdicts (keyed ``(n, m)`` with ``n < m``), scores and ranking."""

    verdicts: dict[tuple[int, int], Verdict]
    f_values: dict[tuple[int, int], float]
    thresholds: dict[tuple[int, int], float]
    copeland_scores: dict[int, int]
    ranking: tuple[int, ...]
    threshold_used: float
    alpha_used: float
    comparisons: int

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "m", "f_value", "threshold", "verdict"])
            for (n, m), v in sorted(self.verdicts.items()):
                w.writerow([n, m, repr(self.f_values[(n, m)]), repr(self.thresholds[(n, m)]), v.value])
            w.writerow(["ranking", " ".join(map(str, self.ranking)), "", "", ""])


def copeland_ranking(orders: Sequence[int], wins: dict[int, int]) -> tuple[int, ...]:
    return tuple(sorted(orders, key=lambda n: (-wins[n], n)))


def order_environments(
    k_total: int,
    gamma: float,
    alpha: float | None,
    c_min: float,
    c_max: float,
    rng: np.random.Generator | None = None,
    redraw_alpha: bool = False,
) -> OrderingResult:
    """Rank environments ``1..k_total`` with ``C(k_total, 2)`` comparisons.

    ``alpha=None`` draws it once from ``U(0, 1)`` using ``rng``; with
    ``redraw_alpha`` every comparison draws a fresh value instead.
    """
    if k_total < 2:
        raise ValidationError("need at least two environments to order")
    if alpha is None or redraw_alpha:
        if rng is None:
            raise ValidationError("a random generator is needed to draw alpha")
    alpha_run = float(rng.uniform()) if alpha is None else float(alpha)
    verdicts, f_values, thresholds = {}, {}, {}
    wins = {n: 0 for n in range(1, k_total + 1)}
    count = 0
    for n, m in combinations(range(1, k_total + 1), 2):
        a = float(rng.uniform()) if redraw_alpha else alpha_run
        t = threshold(a, c_min, c_max)
        v = compare_envs(n, m, gamma, a, c_min, c_max)
        count += 1
        verdicts[(n, m)] = v
        f_values[(n, m)] = f_gamma(gamma, n, m)
        thresholds[(n, m)] = t
        wins[n if v is Verdict.N_SMALLER else m] += 1
    ranking = copeland_ranking(range(1, k_total + 1), wins)
    return OrderingResult(
        verdicts=verdicts,
        f_values=f_values,
        thresholds=thresholds,
        copeland_scores=wins,
        ranking=ranking,
        threshold_used=threshold(alpha_run, c_min, c_max),
        alpha_used=alpha_run,
        comparisons=count,
    )


def pairwise_agreement(rank_a: Sequence[int], rank_b: Sequence[int]) -> float:
    """Fraction of item pairs that both rankings put in the same relative order."""
    if sorted(rank_a) != sorted(rank_b):
        raise ValidationError("rankings must be permutations of the same items")
    pos_a = {x: i for i, x in enumerate(rank_a)}
    pos_b = {x: i for i, x in enumerate(rank_b)}
    pairs = list(combinations(rank_a, 2))
    same = sum((pos_a[x] < pos_a[y]) == (pos_b[x] < pos_b[y]) for x, y in pairs)
    return same / len(pairs)


@dataclass
class LambdaOrdering:
    ranking: tuple[int, ...]
    orders: tuple[int, ...]
    lambda_hat: np.ndarray  # (seeds, orders)
    incomplete: list[tuple[int, int]] = field(default_factory=list)  # (seed, order)

    @property
    def mean_lambda(self) -> dict[int, float]:
        return dict(zip(self.orders, self.lambda_hat.mean(axis=0)))


def default_tracked_pairs(n_states: int, n_actions: int, limit: int = 256,
                          seed: int = 0) -> tuple[tuple[int, int], ...]:
    """All pairs for small models, otherwise a fixed pseudo-random subset."""
    total = n_states * n_actions
    idx = np.arange(total) if total <= limit else np.sort(
        np.random.default_rng(seed).choice(total, size=limit, replace=False))
    return tuple((int(i // n_actions), int(i % n_actions)) for i in idx)


def empirical_lambda_ordering(
    family: EnvironmentFamily,
    schedule: LearningSchedule,
    seeds: Sequence[int],
    q_star: np.ndarray | None = None,
    pairs: Sequence[tuple[int, int]] | None = None,
    burn_in: float = 0.5,
    rows: int = 400,
    min_seeds: int = 10,
) -> LambdaOrdering:
    """Brute-force ordering: train each member independently, rank by mean ``lam``.

    Every member sees the same random stream for a given seed (common random
    numbers), so identical members get identical estimates and keep index
    order.
    """
    if len(seeds) < min_seeds:
        raise ValidationError(f"need at least {min_seeds} seeds, got {len(seeds)}")
    base = family.base
    if q_star is None:
        q_star = value_iteration(base)[0]
    if pairs is None:
        pairs = default_tracked_pairs(base.n_states, base.n_actions)
    spec = TraceSpec(pairs=tuple(pairs), stride=max(1, schedule.max_steps // rows), snapshots=False)
    orders = tuple(family.orders)
    lam = np.zeros((len(seeds), len(orders)))
    incomplete = []
    for i, seed in enumerate(seeds):
        for j, n in enumerate(orders):
            _, trace = train_agent(family[n], schedule, np.random.default_rng(seed), spec)
            lam[i, j] = estimate_lambda(trace, q_star, burn_in)
            if not trace.coverage_complete:
                incomplete.append((seed, n))
    means = lam.mean(axis=0)
    ranking = tuple(orders[j] for j in np.argsort(means, kind="stable"))
    return LambdaOrdering(ranking, orders, lam, incomplete)


class CcqResult(NamedTuple):
    q_hat: np.ndarray
    policy: np.ndarray
    ordering: OrderingResult
    coverage: CoverageReport | None
    ensemble: EnsembleState


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise StageError(name, exc) from exc


def ccq(
    model: TabularMdp | EstimatedModel,
    k: int,
    k_total: int,
    u: float,
    alpha: float | None,
    schedule: LearningSchedule,
    rng: np.random.Generator,
    gamma: float | None = None,
    fusion_period: int = 64,
    tracked_states: Sequence[int] = (),
    q_star: np.ndarray | None = None,
    burn_in: float = 0.5,
    stride: int = 1,
    extra_pairs: Sequence[tuple[int, int]] = (),
    log_every: int | None = None,
) -> CcqResult:
    """Coverage-based ensemble Q-learning.

    1. cost bounds of the (estimated) model;
    2. order all ``k_total`` environments with the pairwise rule;
    3. keep the first ``k`` of the ranking;
    4. build those n-hop environments and run the ensemble;
    5. return ``Q_hat``, its greedy policy and diagnostics.

    ``gamma`` is required for an :class:`EstimatedModel`.  When ``q_star`` is
    given, the coverage report for ``tracked_states`` carries ensemble-form
    bounds; otherwise it has coverage series only.  ``extra_pairs`` are
    followed in the member traces as well (for error-scale estimates) without
    entering the report.
    """
    if not 1 <= k <= k_total:
        raise ValidationError(f"need 1 <= K <= K_total, got K={k}, K_total={k_total}")
    if isinstance(model, EstimatedModel):
        if gamma is None:
            raise ValidationError("gamma is required with an estimated model")
        base = _stage("estimate", model.to_mdp, gamma)
    else:
        base = model
        gamma = base.discount if gamma is None else gamma
    c_min, c_max = _stage("cost_bounds", cost_bounds, model)
    ordering = _stage("order", order_environments, k_total, gamma, alpha, c_min, c_max, rng)
    selected = ordering.ranking[:k]
    family = _stage("synthesize", build_family, base, selected)
    hist_pairs = state_pairs(tracked_states, base.n_actions)
    hist_pairs += tuple((int(s), int(a)) for s, a in extra_pairs if (s, a) not in hist_pairs)
    trace = TraceSpec(pairs=hist_pairs, stride=stride, snapshots=False)
    config = EnsembleConfig(members=selected, update_ratio=u, fusion_period=fusion_period)
    pi_star = None if q_star is None else greedy_policy(q_star)
    q_hat, pi_hat, state = _stage("ensemble", run_ensemble, family, config, schedule, rng, trace,
                                  pi_star, log_every)

    report = None
    if tracked_states:
        pairs = tuple((int(s), int(pi_hat[s])) for s in tracked_states)
        report = _stage("coverage", coverage_report, state.hat_times, state.hat_values,
                        hist_pairs, pairs, pi_hat, 0, burn_in)
        if q_star is not None:
            lam = max(estimate_lambda(state.traces[n], q_star, burn_in) for n in selected)
            theta = estimate_theta(q_star)
            attach_bounds(report, lam, theta, q_star, u=u)
    return CcqResult(q_hat, pi_hat, ordering, report, state)
