"""Model estimation from samples and n-hop environment construction.

The order-``n`` environment repeats each action ``n`` times: its transition
matrix under ``a`` is ``P_a ** n``, its cost is the discounted cost accumulated
over those ``n`` steps and its discount is ``gamma ** n``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ValidationError
from .mdp import TabularMdp

Sample = tuple[int, int, int, float]


@dataclass
class EstimatedModel:
    p_hat: np.ndarray
    c_hat: np.ndarray
    visit_counts: np.ndarray

    @property
    def unvisited(self) -> np.ndarray:
        """``(k, 2)`` array of (s, a) pairs that never appeared in the data."""
        return np.argwhere(self.visit_counts == 0)

    def to_mdp(self, discount: float) -> TabularMdp:
        return TabularMdp(self.p_hat, self.c_hat, discount)


def estimate_model(
    samples: Iterable[Sample], n_states: int, n_actions: int, smoothing: float = 0.0
) -> EstimatedModel:
    """Count-based estimate with additive smoothing.

    ``p_hat(s, s', a) = (N(s, a, s') + k) / (N(s, a) + k |S|)``; ``c_hat`` is the
    mean observed cost.  Rows never visited are uniform and their cost is the
    mean over all samples; both show up in :attr:`EstimatedModel.unvisited`.
    """
    if smoothing < 0:
        raise ValidationError("smoothing must be nonnegative")
    arr = np.asarray(list(samples) if not isinstance(samples, np.ndarray) else samples, dtype=np.float64)
    if arr.size == 0:
        raise ValidationError("no samples to estimate from")
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValidationError("samples must be (s, a, s', c) records")
    s, a, s2 = (arr[:, i].astype(np.int64) for i in range(3))
    c = arr[:, 3]
    if s.min() < 0 or s2.min() < 0 or s.max() >= n_states or s2.max() >= n_states:
        raise ValidationError("state index out of range in samples")
    if a.min() < 0 or a.max() >= n_actions:
        raise ValidationError("action index out of range in samples")

    counts = np.zeros((n_states, n_states, n_actions))
    np.add.at(counts, (s, s2, a), 1.0)
    visits = counts.sum(axis=1)
    cost_sum = np.zeros((n_states, n_actions))
    np.add.at(cost_sum, (s, a), c)

    denom = visits + smoothing * n_states
    with np.errstate(invalid="ignore", divide="ignore"):
        p_hat = (counts + smoothing) / denom[:, None, :]
        c_hat = cost_sum / visits
    empty = visits == 0
    ss, aa = np.nonzero(empty)
    p_hat[ss, :, aa] = 1.0 / n_states
    c_hat[empty] = c.mean()
    return EstimatedModel(p_hat, c_hat, visits.astype(np.int64))


def build_nhop(base: TabularMdp, n: int) -> TabularMdp:
    """Order-``n`` environment; ``n = 1`` returns ``base`` itself."""
    if int(n) != n or n < 1:
        raise ValidationError(f"order must be a positive integer, got {n!r}")
    if n == 1:
        return base
    gamma = base.discount
    p = np.empty_like(base.transition)
    cost = np.empty_like(base.cost)
    for a in range(base.n_actions):
        pa = base.matrix(a)
        p[:, :, a] = np.linalg.matrix_power(pa, n)
        acc = base.cost[:, a].copy()
        for _ in range(n - 1):
            acc = base.cost[:, a] + gamma * (pa @ acc)
        cost[:, a] = acc
    _renormalize(p)
    return TabularMdp(p, cost, gamma ** n)


def _renormalize(p: np.ndarray) -> None:
    np.clip(p, 0.0, None, out=p)
    p /= p.sum(axis=1, keepdims=True)


@dataclass
class EnvironmentFamily:
    """The base MDP plus its n-hop derivatives, keyed by order."""

    base: TabularMdp
    members: dict[int, TabularMdp] = field(default_factory=dict)

    def __post_init__(self):
        self.members.setdefault(1, self.base)

    def __getitem__(self, order: int) -> TabularMdp:
        try:
            return self.members[order]
        except KeyError:
            raise ValidationError(f"environment of order {order} is not in the family") from None

    def __contains__(self, order: int) -> bool:
        return order in self.members

    @property
    def orders(self) -> list[int]:
        return sorted(self.members)

    def manifest(self) -> dict:
        return {
            "n_states": self.base.n_states,
            "n_actions": self.base.n_actions,
            "members": [
                {
                    "order": n,
                    "discount": m.discount,
                    "c_min": m.cost_range[0],
                    "c_max": m.cost_range[1],
                }
                for n, m in sorted(self.members.items())
            ],
        }

    def write_manifest(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=2) + "\n")


def build_family(base: TabularMdp, orders: int | Sequence[int]) -> EnvironmentFamily:
    """Build members for ``orders`` (an int ``K`` means ``1..K``).

    Matrix powers are accumulated incrementally, so asking for ``1..K``
    costs ``K - 1`` products per action.
    """
    wanted = sorted(set(range(1, orders + 1) if isinstance(orders, int) else orders))
    if not wanted or wanted[0] < 1:
        raise ValidationError("orders must be positive")
    gamma = base.discount
    family = EnvironmentFamily(base)
    p_pow = [base.matrix(a).copy() for a in range(base.n_actions)]
    c_acc = [base.cost[:, a].copy() for a in range(base.n_actions)]
    for n in range(2, wanted[-1] + 1):
        for a in range(base.n_actions):
            c_acc[a] = base.cost[:, a] + gamma * (base.matrix(a) @ c_acc[a])
            p_pow[a] = p_pow[a] @ base.matrix(a)
        if n in wanted:
            p = np.stack(p_pow, axis=2)
            _renormalize(p)
            family.members[n] = TabularMdp(p, np.column_stack(c_acc), gamma ** n)
    return family


def cost_bounds(model: TabularMdp | EstimatedModel) -> tuple[float, float]:
    """``(c_min, c_max)`` over the cost table (visited pairs only for estimates).

    Raises:
        ValidationError: if ``c_min <= 0``; the message names the offending pair.
    """
    if isinstance(model, EstimatedModel):
        cost = np.where(model.visit_counts > 0, model.c_hat, np.nan)
        if np.all(np.isnan(cost)):
            raise ValidationError("estimated model has no visited pairs")
    else:
        cost = model.cost
    if cost.size == 0:
        raise ValidationError("empty cost table")
    s, a = np.unravel_index(np.nanargmin(cost), cost.shape)
    c_min, c_max = float(cost[s, a]), float(np.nanmax(cost))
    if not c_min > 0:
        raise ValidationError(f"c_min must be positive; cost({s}, {a}) = {c_min!r}")
    return c_min, c_max


def write_trajectories(samples: Iterable[Sample], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "a", "s_next", "c"])
        for s, a, s2, c in samples:
            w.writerow([int(s), int(a), int(s2), repr(float(c))])


def read_trajectories(path: str | Path) -> list[Sample]:
    with open(path, newline="") as fh:
        rows = csv.DictReader(fh)
        return [(int(r["s"]), int(r["a"]), int(r["s_next"]), float(r["c"])) for r in rows]
