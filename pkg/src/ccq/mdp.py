"""Finite discounted-cost MDPs and their exact solution.

The transition tensor is indexed ``(s, s', a)`` and costs ``(s, a)``.  Policies
are integer arrays mapping each state to an action; Q-tables are float arrays
of shape ``(n_states, n_actions)``.  Everything downstream measures itself
against :func:`value_iteration`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator

import numpy as np

from .exceptions import ConvergenceError, ValidationError

STOCHASTIC_ATOL = 1e-9
FORMAT_HEADER = "# ccq-mdp v1"


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite state/action MDP with bounded positive costs.

    Attributes:
        transition: array ``(S, S, A)``; ``transition[s, s2, a]`` is the
            probability of moving from ``s`` to ``s2`` under ``a``.
        cost: array ``(S, A)`` of costs in ``[c_min, c_max]``, ``c_min > 0``.
        discount: discount factor in ``(0, 1)``.
    """

    transition: np.ndarray
    cost: np.ndarray
    discount: float
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "transition", np.asarray(self.transition, dtype=np.float64))
        object.__setattr__(self, "cost", np.asarray(self.cost, dtype=np.float64))
        object.__setattr__(self, "discount", float(self.discount))
        if self.validate:
            self.check()

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[2]

    def check(self) -> None:
        """Raise :class:`ValidationError` unless every invariant holds."""
        p, c = self.transition, self.cost
        if p.ndim != 3 or p.shape[0] != p.shape[1]:
            raise ValidationError(f"transition must have shape (S, S, A), got {p.shape}")
        if p.shape[0] < 1 or p.shape[2] < 1:
            raise ValidationError("need at least one state and one action")
        if c.shape != (p.shape[0], p.shape[2]):
            raise ValidationError(f"cost shape {c.shape} does not match (S, A)={(p.shape[0], p.shape[2])}")
        if not np.all(np.isfinite(p)) or p.min() < 0.0:
            raise ValidationError("transition entries must be finite and nonnegative")
        rows = p.sum(axis=1)
        bad = np.argwhere(np.abs(rows - 1.0) > STOCHASTIC_ATOL)
        if len(bad):
            s, a = bad[0]
            raise ValidationError(f"transition row (s={s}, a={a}) sums to {rows[s, a]!r}")
        if not np.all(np.isfinite(c)):
            raise ValidationError("costs must be finite")
        if c.min() <= 0.0:
            s, a = np.unravel_index(np.argmin(c), c.shape)
            raise ValidationError(f"cost({s}, {a}) = {c[s, a]!r} is not positive")
        if not 0.0 < self.discount < 1.0:
            raise ValidationError(f"discount must lie in (0, 1), got {self.discount!r}")

    def matrix(self, a: int) -> np.ndarray:
        """The ``(S, S)`` transition matrix of action ``a``."""
        return self.transition[:, :, a]

    @cached_property
    def cdf(self) -> np.ndarray:
        """Cumulative successor distribution, shape ``(S, A, S)``, for sampling."""
        out = np.cumsum(np.moveaxis(self.transition, 2, 1), axis=2)
        out[:, :, -1] = 1.0
        return np.ascontiguousarray(out)

    @property
    def cost_range(self) -> tuple[float, float]:
        return float(self.cost.min()), float(self.cost.max())

    def backup(self, q: np.ndarray) -> np.ndarray:
        """One Bellman optimality backup ``c + gamma * P min_a' Q``."""
        v = q.min(axis=1)
        nxt = np.einsum("ija,j->ia", self.transition, v, optimize=True)
        return self.cost + self.discount * nxt


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """Row-wise argmin; ``np.argmin`` already breaks ties toward the lowest index."""
    return np.argmin(np.asarray(q), axis=1).astype(np.int64)


def bellman_iterates(mdp: TabularMdp, q0: np.ndarray | None = None) -> Iterator[np.ndarray]:
    """Yield the value-iteration sequence ``Q_1, Q_2, ...`` starting from ``q0``."""
    q = np.zeros_like(mdp.cost) if q0 is None else np.array(q0, dtype=np.float64)
    while True:
        q = mdp.backup(q)
        yield q


def value_iteration(
    mdp: TabularMdp, tol: float = 1e-10, max_iter: int = 100_000
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Solve for ``(Q*, V*, pi*)``.

    Iteration stops once ``gamma * |Q_k - Q_{k-1}|_inf <= tol``, which bounds the
    Bellman residual of the returned ``Q_k`` by ``tol``.

    Raises:
        ConvergenceError: if ``max_iter`` sweeps do not reach ``tol``.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    mdp.check()
    prev = np.zeros_like(mdp.cost)
    residual = np.inf
    for k, q in enumerate(bellman_iterates(mdp, prev), start=1):
        residual = mdp.discount * float(np.max(np.abs(q - prev)))
        if residual <= tol:
            return q, q.min(axis=1), greedy_policy(q)
        if k >= max_iter:
            break
        prev = q
    raise ConvergenceError("value iteration did not converge", residual, max_iter)


def bellman_residual(mdp: TabularMdp, q: np.ndarray) -> float:
    return float(np.max(np.abs(mdp.backup(q) - q)))


def step(mdp: TabularMdp, s: int, a: int, rng: np.random.Generator) -> tuple[int, float]:
    """Sample one transition; the cost does not depend on the successor."""
    if not (0 <= s < mdp.n_states and 0 <= a < mdp.n_actions):
        raise ValidationError(f"(s={s}, a={a}) out of range for {mdp.n_states}x{mdp.n_actions} MDP")
    s2 = int(np.searchsorted(mdp.cdf[s, a], rng.random(), side="right"))
    return min(s2, mdp.n_states - 1), float(mdp.cost[s, a])


def average_policy_error(pi_hat: np.ndarray, pi_star: np.ndarray) -> float:
    """Fraction of states on which two deterministic policies disagree."""
    pi_hat, pi_star = np.asarray(pi_hat), np.asarray(pi_star)
    if pi_hat.shape != pi_star.shape or pi_hat.ndim != 1:
        raise ValidationError(f"policy shapes differ: {pi_hat.shape} vs {pi_star.shape}")
    return float(np.mean(pi_hat != pi_star))


def policy_matrix(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    pi = np.asarray(pi)
    if pi.shape != (mdp.n_states,) or pi.min() < 0 or pi.max() >= mdp.n_actions:
        raise ValidationError("policy must assign a valid action to every state")
    return mdp.transition[np.arange(mdp.n_states), :, pi]


def occupancy_distribution(
    mdp: TabularMdp,
    pi: np.ndarray,
    horizon: int | None = None,
    tol: float = 1e-12,
    max_iter: int = 100_000,
) -> tuple[np.ndarray, float]:
    """State-action occupancy of ``pi`` as an ``(S, A)`` array plus a residual.

    With ``horizon=None`` this is the stationary distribution, found by power
    iteration on the lazy chain ``(I + P_pi) / 2`` (same fixed points, but
    aperiodic).  Non-convergence is reported through the returned L1
    residual ``|d P_pi - d|_1`` instead of raising.  With a horizon, it is the
    average state distribution over the first ``horizon`` steps from a
    uniform start.
    """
    p_pi = policy_matrix(mdp, pi)
    n = mdp.n_states
    d = np.full(n, 1.0 / n)
    if horizon is None:
        for _ in range(max_iter):
            nxt = 0.5 * (d + d @ p_pi)
            if np.abs(nxt - d).sum() < tol:
                d = nxt
                break
            d = nxt
        residual = float(np.abs(d @ p_pi - d).sum())
    else:
        if horizon < 1:
            raise ValidationError("horizon must be >= 1")
        acc = np.zeros(n)
        for _ in range(horizon):
            acc += d
            d = d @ p_pi
        d = acc / horizon
        residual = 0.0
    d = d / d.sum()
    out = np.zeros((n, mdp.n_actions))
    out[np.arange(n), np.asarray(pi)] = d
    return out, residual


def random_mdp(
    n_states: int,
    n_actions: int,
    rng: np.random.Generator,
    discount: float = 0.9,
    support: int | None = None,
    cost_range: tuple[float, float] = (1.0, 2.0),
) -> TabularMdp:
    """Random MDP with Dirichlet rows, optionally restricted to ``support`` successors."""
    p = np.zeros((n_states, n_states, n_actions))
    k = n_states if support is None else min(support, n_states)
    for s in range(n_states):
        for a in range(n_actions):
            succ = rng.choice(n_states, size=k, replace=False)
            p[s, succ, a] = rng.dirichlet(np.ones(k))
    cost = rng.uniform(*cost_range, size=(n_states, n_actions))
    return TabularMdp(p, cost, discount)


def save_mdp(mdp: TabularMdp, path: str | Path) -> None:
    """Write ``mdp`` in the line-oriented text format read by :func:`load_mdp`.

    Layout::

        # ccq-mdp v1
        n_states <S>
        n_actions <A>
        discount <gamma>
        cost
        <s> <a> <c>          (S*A lines)
        transitions <count>
        <s> <a> <s'> <p>     (nonzero entries only)
    """
    lines = [
        FORMAT_HEADER,
        f"n_states {mdp.n_states}",
        f"n_actions {mdp.n_actions}",
        f"discount {mdp.discount!r}",
        "cost",
    ]
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            lines.append(f"{s} {a} {float(mdp.cost[s, a])!r}")
    nz = np.argwhere(mdp.transition > 0.0)
    lines.append(f"transitions {len(nz)}")
    for s, s2, a in nz:
        lines.append(f"{s} {a} {s2} {float(mdp.transition[s, s2, a])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_mdp(path: str | Path) -> TabularMdp:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != FORMAT_HEADER:
        raise ValidationError(f"{path}: missing '{FORMAT_HEADER}' header")
    it = iter(line for line in text[1:] if line.strip())

    def keyed(name: str) -> str:
        key, _, value = next(it).partition(" ")
        if key != name:
            raise ValidationError(f"{path}: expected '{name}', found '{key}'")
        return value.strip()

    n_states = int(keyed("n_states"))
    n_actions = int(keyed("n_actions"))
    discount = float(keyed("discount"))
    keyed("cost")
    cost = np.zeros((n_states, n_actions))
    for _ in range(n_states * n_actions):
        s, a, c = next(it).split()
        cost[int(s), int(a)] = float(c)
    count = int(keyed("transitions"))
    p = np.zeros((n_states, n_states, n_actions))
    for _ in range(count):
        s, a, s2, prob = next(it).split()
        p[int(s), int(s2), int(a)] = float(prob)
    return TabularMdp(p, cost, discount)
