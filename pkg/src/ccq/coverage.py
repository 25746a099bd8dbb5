"""Coverage coefficients, error-scale estimators and log-coverage bounds.

Exploration is the linear rule ``v(s, a) = Q(s, a) / sum_k Q(s, k)`` and the
policy occupancy is the indicator ``d(s, a) = 1[pi(s) = a]``, so the coverage
coefficient ``C = d / v`` is either 0 or ``sum_k Q(s, k) / Q(s, a) >= 1``.

Q-errors ``Q_t - Q*`` are modelled as zero-mean with variance ``lam**2 / 3``
(``lam`` is the half-width of the matching uniform law).  ``theta`` bounds
the ratio between optimal Q-values of different actions at one state.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .exceptions import ValidationError
from .qlearning import QTrace

THETA_FLOOR = 1.0 + 1e-6


def exploration_dist(q: np.ndarray, s: int) -> np.ndarray:
    row = np.asarray(q[s], dtype=np.float64)
    if np.any(row <= 0):
        a = int(np.argmin(row))
        raise ValidationError(f"Q({s}, {a}) = {row[a]!r}; linear exploration needs positive Q")
    return row / row.sum()


def coverage_coefficient(q: np.ndarray, pi: np.ndarray, s: int, a: int) -> float:
    v = exploration_dist(q, s)
    if pi[s] != a:
        return 0.0
    return float(1.0 / v[a])


def cc_star(q: np.ndarray, pi: np.ndarray, pairs: Sequence[tuple[int, int]] | None = None) -> float:
    """Largest coverage coefficient over ``pairs`` (default: every ``(s, pi(s))``)."""
    if pairs is None:
        pairs = [(s, int(pi[s])) for s in range(len(pi))]
    if len(pairs) == 0:
        raise ValidationError("no tracked pairs")
    return max(coverage_coefficient(q, pi, s, a) for s, a in pairs)


def log_cc_series(rows: np.ndarray, a: int) -> np.ndarray:
    """``log C_t`` for a tracked state whose policy action is ``a``.

    ``rows`` is ``(T, |A|)``: the Q-values of every action at that state over time.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if np.any(rows <= 0):
        raise ValidationError("linear exploration needs positive Q")
    return np.log(rows.sum(axis=1)) - np.log(rows[:, a])


def _post_burn_in(times: np.ndarray, burn_in: float) -> np.ndarray:
    if not 0.0 <= burn_in < 1.0:
        raise ValidationError("burn_in must lie in [0, 1)")
    if len(times) == 0:
        return np.zeros(0, dtype=bool)
    return times > burn_in * times[-1]


def estimate_lambda(trace: QTrace, q_star: np.ndarray, burn_in: float = 0.5) -> float:
    """``sqrt(3 * Var(Q_t - Q*))`` pooled over tracked entries after burn-in.

    Uses the per-step history when pairs were tracked, otherwise the full-table
    snapshots.
    """
    if trace.pairs:
        keep = _post_burn_in(trace.times, burn_in)
        s = np.array([p[0] for p in trace.pairs])
        a = np.array([p[1] for p in trace.pairs])
        err = trace.values[keep] - q_star[s, a][None, :]
    else:
        times = np.array([t for t, _ in trace.snapshots], dtype=np.int64)
        keep = _post_burn_in(times, burn_in)
        err = np.array([q for (_, q), k in zip(trace.snapshots, keep) if k]) - q_star[None]
    if err.size == 0:
        raise ValidationError("trace is empty after burn-in")
    return lambda_from_errors(err)


def lambda_from_errors(errors: np.ndarray) -> float:
    return float(math.sqrt(3.0 * np.var(np.asarray(errors, dtype=np.float64))))


def estimate_theta(q_star: np.ndarray) -> float:
    """Largest within-state ratio of optimal Q-values (always >= 1)."""
    q_star = np.asarray(q_star, dtype=np.float64)
    if np.any(q_star <= 0):
        raise ValidationError("theta needs strictly positive Q*")
    return float(np.max(q_star.max(axis=1) / q_star.min(axis=1)))


def _clamp_theta(theta: float) -> float:
    if theta < 1.0:
        raise ValidationError(f"theta must be >= 1, got {theta!r}")
    return max(theta, THETA_FLOOR)


def _bound_terms(lam: float, theta: float, q_star_sa: float) -> tuple[float, float, float]:
    if lam < 0:
        raise ValidationError("lambda must be nonnegative")
    if not q_star_sa > 0:
        raise ValidationError("Q*(s, a) must be positive")
    theta = _clamp_theta(theta)
    scale = lam ** 2 / (3.0 * q_star_sa ** 2)
    e_coef = 0.5 - 1.0 / (1.0 + theta) ** 2
    v_coef = 1.0 + 2.0 * theta ** 2 / (1.0 + theta) ** 2 + 2.0 * math.sqrt(2.0) * theta / (1.0 + theta)
    return math.log1p(theta), scale * e_coef, scale * v_coef


def bound_prop1(lam: float, theta: float, q_star_sa: float) -> tuple[float, float]:
    """Single-environment upper bounds on ``E[log C]`` and ``Var[log C]``."""
    const, e_term, v_term = _bound_terms(lam, theta, q_star_sa)
    return const + e_term, v_term


def bound_prop2(lam_max: float, theta: float, u: float, q_star_sa: float) -> tuple[float, float]:
    """Ensemble bounds: the error terms shrink by ``(1 - u) / (1 + u)``."""
    if not 0.0 < u < 1.0:
        raise ValidationError(f"update ratio must lie in (0, 1), got {u!r}")
    const, e_term, v_term = _bound_terms(lam_max, theta, q_star_sa)
    factor = (1.0 - u) / (1.0 + u)
    return const + e_term * factor, v_term * factor


@dataclass
class CoverageReport:
    """Coverage time series for tracked pairs of one policy.

    ``cc`` has one column per pair; a column is all zeros when the policy does
    not pick that pair's action (the trivial case), and its moments are NaN.
    """

    env_order: int
    pairs: tuple[tuple[int, int], ...]
    times: np.ndarray
    cc: np.ndarray
    mean_log_cc: np.ndarray
    var_log_cc: np.ndarray
    e_bound: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v_bound: np.ndarray = field(default_factory=lambda: np.zeros(0))
    proposition: str = ""

    @property
    def c_star(self) -> float:
        return float(self.cc.max()) if self.cc.size else 0.0

    @property
    def log_cc(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.cc)

    def within_bound(self) -> np.ndarray:
        """Per pair: is the empirical mean of ``log C`` at most the expectation bound?"""
        if self.e_bound.size == 0:
            raise ValidationError("report carries no bounds")
        return self.mean_log_cc <= self.e_bound

    def write_csv(self, path: str | Path, burn_in: float = 0.5) -> None:
        log_cc = self.log_cc
        has_bounds = self.e_bound.size > 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["env_order", "s", "a", "t", "C", "logC", "mean_logC", "var_logC",
                        "e_bound", "v_bound", "proposition"])
            for k, (s, a) in enumerate(self.pairs):
                for i, t in enumerate(self.times):
                    w.writerow([
                        self.env_order, s, a, int(t), repr(float(self.cc[i, k])),
                        repr(float(log_cc[i, k])), repr(float(self.mean_log_cc[k])),
                        repr(float(self.var_log_cc[k])),
                        repr(float(self.e_bound[k])) if has_bounds else "",
                        repr(float(self.v_bound[k])) if has_bounds else "",
                        self.proposition,
                    ])


def state_pairs(states: Sequence[int], n_actions: int) -> tuple[tuple[int, int], ...]:
    """Every (s, a) for the given states, in the column order reports expect."""
    return tuple((int(s), a) for s in states for a in range(n_actions))


def coverage_report(
    times: np.ndarray,
    history: np.ndarray,
    history_pairs: Sequence[tuple[int, int]],
    pairs: Sequence[tuple[int, int]],
    policy: np.ndarray,
    env_order: int = 1,
    burn_in: float = 0.5,
) -> CoverageReport:
    """Build a report from a Q history.

    ``history`` is ``(T, len(history_pairs))`` and must contain every action
    of each state appearing in ``pairs``.
    """
    col = {p: i for i, p in enumerate(history_pairs)}
    times = np.asarray(times)
    keep = _post_burn_in(times, burn_in)
    if not np.any(keep):
        raise ValidationError("history is empty after burn-in")
    cc = np.zeros((len(times), len(pairs)))
    means = np.full(len(pairs), np.nan)
    variances = np.full(len(pairs), np.nan)
    for k, (s, a) in enumerate(pairs):
        actions = sorted(b for (t, b) in history_pairs if t == s)
        if not actions or actions != list(range(len(actions))) or a not in actions:
            raise ValidationError(f"history lacks the full action row of state {s}")
        rows = history[:, [col[(s, b)] for b in actions]]
        if policy[s] != a:
            continue
        series = log_cc_series(rows, a)
        cc[:, k] = np.exp(series)
        means[k] = series[keep].mean()
        variances[k] = series[keep].var()
    return CoverageReport(env_order, tuple(pairs), times, cc, means, variances)


def attach_bounds(report: CoverageReport, lam: float, theta: float, q_star: np.ndarray,
                  u: float | None = None) -> CoverageReport:
    """Fill the per-pair bound columns (ensemble form when ``u`` is given)."""
    e, v = [], []
    for s, a in report.pairs:
        if u is None:
            eb, vb = bound_prop1(lam, theta, float(q_star[s, a]))
        else:
            eb, vb = bound_prop2(lam, theta, u, float(q_star[s, a]))
        e.append(eb)
        v.append(vb)
    report.e_bound = np.array(e)
    report.v_bound = np.array(v)
    report.proposition = "ensemble" if u is not None else "single"
    return report


@dataclass(frozen=True)
class TrendVerdict:
    non_increasing: bool
    keys: tuple
    means: tuple[float, ...]
    standard_errors: tuple[float, ...]


def variance_vs_k_trend(per_key: Mapping[float, Sequence[float]], min_seeds: int = 20) -> TrendVerdict:
    """Is the seed-averaged variance non-increasing along the sorted keys?

    Each step may rise by at most one standard error of the difference of
    the two seed means.
    """
    if len(per_key) < 3:
        raise ValidationError("need at least three distinct K values")
    keys = tuple(sorted(per_key))
    means, ses = [], []
    for key in keys:
        x = np.asarray(per_key[key], dtype=np.float64)
        if len(x) < min_seeds:
            raise ValidationError(f"K={key}: {len(x)} seeds, need {min_seeds}")
        means.append(float(x.mean()))
        ses.append(float(x.std(ddof=1) / math.sqrt(len(x))))
    ok = all(
        means[i + 1] <= means[i] + math.hypot(ses[i], ses[i + 1])
        for i in range(len(keys) - 1)
    )
    return TrendVerdict(ok, keys, tuple(means), tuple(ses))
