"""Tabular Q-learning with epsilon-greedy exploration, plus a Double-Q baseline.

Costs are minimized, so greedy means argmin.  Agents run fixed-length
trajectories from uniformly drawn start states and stop once every (s, a)
pair has been visited ``min_visits`` times or ``max_steps`` is exhausted.

Randomness is drawn from a :class:`numpy.random.Generator` in fixed blocks of
uniforms, so an agent advanced in several chunks consumes exactly the same
stream as one advanced in a single call.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels as K
from .exceptions import ValidationError
from .mdp import TabularMdp

BLOCK = 4096


@dataclass(frozen=True)
class LearningSchedule:
    """Step sizes, exploration and stopping rule.

    ``learning_rate=None`` selects the per-pair decay ``(1 + visits) ** -lr_power``;
    ``epsilon=None`` selects ``max(epsilon_min, epsilon_decay ** episode)``.
    """

    learning_rate: float | None = None
    lr_power: float = 0.85
    epsilon: float | None = None
    epsilon_min: float = 0.05
    epsilon_decay: float = 0.999
    trajectory_length: int = 100
    min_visits: int = 100
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.learning_rate is not None and not 0.0 < self.learning_rate <= 1.0:
            raise ValidationError("learning_rate must lie in (0, 1]")
        if not 0.5 < self.lr_power <= 1.0:
            raise ValidationError("lr_power must lie in (0.5, 1] for convergence")
        if self.epsilon is not None and not 0.0 <= self.epsilon <= 1.0:
            raise ValidationError("epsilon must lie in [0, 1]")
        if self.trajectory_length < 1 or self.min_visits < 1 or self.max_steps < 1:
            raise ValidationError("trajectory_length, min_visits and max_steps must be >= 1")

    def params(self) -> np.ndarray:
        return np.array([
            -1.0 if self.learning_rate is None else self.learning_rate,
            self.lr_power,
            -1.0 if self.epsilon is None else self.epsilon,
            self.epsilon_min,
            self.epsilon_decay,
            self.trajectory_length,
            self.min_visits,
            self.max_steps,
        ])


@dataclass(frozen=True)
class TraceSpec:
    """Which Q entries to follow step by step, and how often to record them."""

    pairs: tuple[tuple[int, int], ...] = ()
    stride: int = 1
    snapshots: bool = True

    def __post_init__(self):
        if self.stride < 1:
            raise ValidationError("stride must be >= 1")


@dataclass
class QTrace:
    """Time-indexed record of one agent's learning.

    ``times``/``values``/``visits`` hold the per-pair history (one column per
    tracked pair); ``snapshots`` holds full tables at steps ``1, 2, 4, 8, ...``.
    """

    pairs: tuple[tuple[int, int], ...]
    times: np.ndarray
    values: np.ndarray
    visits: np.ndarray
    snapshots: list[tuple[int, np.ndarray]] = field(default_factory=list)
    snapshot_visits: list[np.ndarray] = field(default_factory=list)
    visit_counts: np.ndarray | None = None
    steps: int = 0
    deficit: list[tuple[int, int, int]] = field(default_factory=list)

    @property
    def coverage_complete(self) -> bool:
        return not self.deficit

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "s", "a", "q_value", "visits"])
            for i, t in enumerate(self.times):
                for k, (s, a) in enumerate(self.pairs):
                    w.writerow([int(t), s, a, repr(float(self.values[i, k])), int(self.visits[i, k])])


def initial_q(env: TabularMdp) -> np.ndarray:
    """Constant ``c_min / (1 - gamma)``: positive and a lower bound on ``Q*``."""
    c_min = env.cost.min()
    return np.full(env.cost.shape, c_min / (1.0 - env.discount))


def q_update(q: np.ndarray, sample, alpha: float, gamma: float) -> np.ndarray:
    """Return a copy of ``q`` with one Q-learning backup applied at ``(s, a)``."""
    s, a, s2, c = sample
    n_states, n_actions = q.shape
    if not (0 <= s < n_states and 0 <= s2 < n_states and 0 <= a < n_actions):
        raise ValidationError("sample indices out of range")
    if not 0.0 < alpha <= 1.0:
        raise ValidationError("alpha must lie in (0, 1]")
    out = np.array(q, dtype=np.float64)
    out[s, a] = (1.0 - alpha) * out[s, a] + alpha * (c + gamma * out[s2].min())
    return out


def double_q_update(qa: np.ndarray, qb: np.ndarray, sample, alpha: float, gamma: float,
                    update_a: bool) -> tuple[np.ndarray, np.ndarray]:
    """One Double-Q step: the updated table picks the argmin, the other evaluates it."""
    s, a, s2, c = sample
    qa, qb = np.array(qa, dtype=np.float64), np.array(qb, dtype=np.float64)
    if update_a:
        qa[s, a] = (1.0 - alpha) * qa[s, a] + alpha * (c + gamma * qb[s2, np.argmin(qa[s2])])
    else:
        qb[s, a] = (1.0 - alpha) * qb[s, a] + alpha * (c + gamma * qa[s2, np.argmin(qb[s2])])
    return qa, qb


def epsilon_greedy(q: np.ndarray, s: int, epsilon: float, rng: np.random.Generator) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise ValidationError("epsilon must lie in [0, 1]")
    if rng.random() < epsilon:
        return int(rng.integers(q.shape[1]))
    return int(np.argmin(q[s]))


class QAgent:
    """A resumable tabular learner bound to one environment.

    ``advance(n)`` performs up to ``n`` environment steps.  Set ``double=True``
    for Double Q-learning, in which case :attr:`q` is the average of the two
    tables.
    """

    def __init__(self, env: TabularMdp, schedule: LearningSchedule, rng: np.random.Generator,
                 trace: TraceSpec | None = None, q0: np.ndarray | None = None,
                 double: bool = False):
        self.env = env
        self.schedule = schedule
        self.rng = rng
        self.double = double
        self.trace_spec = trace or TraceSpec()
        start = initial_q(env) if q0 is None else np.array(q0, dtype=np.float64)
        if start.shape != env.cost.shape:
            raise ValidationError("initial Q shape does not match the environment")
        self.tables = [start.copy(), start.copy()] if double else [start]
        self.visits = np.zeros(env.cost.shape, dtype=np.int64)
        self.table_visits = [np.zeros_like(self.visits), np.zeros_like(self.visits)]
        self._state = np.zeros(6, dtype=np.int64)
        self._state[K.S_DEFICIT] = self.visits.size
        self._params = schedule.params()
        self._cdf = env.cdf
        self._uniforms = np.empty((0, 5))
        self._pos = 0

        pairs = tuple((int(s), int(a)) for s, a in self.trace_spec.pairs)
        for s, a in pairs:
            if not (0 <= s < env.n_states and 0 <= a < env.n_actions):
                raise ValidationError(f"tracked pair ({s}, {a}) out of range")
        self._pairs = pairs
        self._ts = np.array([p[0] for p in pairs], dtype=np.int64)
        self._ta = np.array([p[1] for p in pairs], dtype=np.int64)
        self._hist_q = np.zeros((0, len(pairs)))
        self._hist_v = np.zeros((0, len(pairs)), dtype=np.int64)
        self._snapshots: list[tuple[int, np.ndarray]] = []
        self._snapshot_visits: list[np.ndarray] = []
        self._next_snapshot = 1

    @property
    def q(self) -> np.ndarray:
        if self.double:
            return 0.5 * (self.tables[0] + self.tables[1])
        return self.tables[0]

    @q.setter
    def q(self, value: np.ndarray) -> None:
        if self.double:
            raise ValidationError("cannot overwrite a Double-Q agent's tables")
        self.tables[0][...] = value

    @property
    def steps(self) -> int:
        return int(self._state[K.S_TOTAL])

    @property
    def done(self) -> bool:
        return bool(self._state[K.S_DONE])

    def _ensure_history(self, upto_step: int) -> None:
        rows = upto_step // self.trace_spec.stride
        if len(self._pairs) and rows > self._hist_q.shape[0]:
            grow = max(rows, 2 * self._hist_q.shape[0])
            self._hist_q = np.resize(self._hist_q, (grow, len(self._pairs)))
            self._hist_v = np.resize(self._hist_v, (grow, len(self._pairs)))

    def advance(self, n_steps: int) -> int:
        """Run up to ``n_steps`` steps; returns how many were taken."""
        taken = 0
        while taken < n_steps and not self.done:
            if self._pos >= len(self._uniforms):
                self._uniforms = self.rng.random((BLOCK, 5))
                self._pos = 0
            chunk = min(n_steps - taken, len(self._uniforms) - self._pos)
            if self.trace_spec.snapshots:
                chunk = min(chunk, self._next_snapshot - self.steps)
            self._ensure_history(self.steps + chunk)
            used = self._run(chunk)
            self._pos += used
            taken += used
            if self.trace_spec.snapshots and self.steps == self._next_snapshot:
                self._snapshots.append((self.steps, self.q.copy()))
                self._snapshot_visits.append(self.visits.copy())
                self._next_snapshot *= 2
        return taken

    def _run(self, chunk: int) -> int:
        env = self.env
        stride = self.trace_spec.stride
        if self.double:
            return K.advance_double_q(
                self.tables[0], self.tables[1], self.visits, self.table_visits[0],
                self.table_visits[1], self._cdf, env.cost, env.discount, self._uniforms,
                self._pos, chunk, self._state, self._params, self._ts, self._ta,
                self._hist_q, self._hist_v, stride)
        return K.advance_q(
            self.tables[0], self.visits, self._cdf, env.cost, env.discount, self._uniforms,
            self._pos, chunk, self._state, self._params, self._ts, self._ta,
            self._hist_q, self._hist_v, stride)

    def run(self) -> "QAgent":
        while not self.done:
            self.advance(self.schedule.max_steps)
        return self

    def deficit(self) -> list[tuple[int, int, int]]:
        need = self.schedule.min_visits
        return [(int(s), int(a), int(need - self.visits[s, a]))
                for s, a in np.argwhere(self.visits < need)]

    def trace(self) -> QTrace:
        rows = self.steps // self.trace_spec.stride if self._pairs else 0
        stride = self.trace_spec.stride
        return QTrace(
            pairs=self._pairs,
            times=np.arange(1, rows + 1, dtype=np.int64) * stride,
            values=self._hist_q[:rows].copy(),
            visits=self._hist_v[:rows].copy(),
            snapshots=list(self._snapshots),
            snapshot_visits=list(self._snapshot_visits),
            visit_counts=self.visits.copy(),
            steps=self.steps,
            deficit=self.deficit(),
        )


def train_agent(env: TabularMdp, schedule: LearningSchedule, rng: np.random.Generator,
                trace: TraceSpec | Sequence[tuple[int, int]] | None = None,
                q0: np.ndarray | None = None) -> tuple[np.ndarray, QTrace]:
    """Train until every pair has ``min_visits`` visits or ``max_steps`` runs out.

    Hitting ``max_steps`` first is not an error; the returned trace then has
    ``coverage_complete == False`` and lists the missing visits in ``deficit``.
    """
    if trace is not None and not isinstance(trace, TraceSpec):
        trace = TraceSpec(pairs=tuple(trace))
    agent = QAgent(env, schedule, rng, trace, q0).run()
    return agent.q.copy(), agent.trace()


def train_double_q(env: TabularMdp, schedule: LearningSchedule, rng: np.random.Generator,
                   trace: TraceSpec | None = None) -> tuple[np.ndarray, QTrace]:
    """Double Q-learning; returns the average of the two tables and the trace."""
    agent = QAgent(env, schedule, rng, trace, double=True).run()
    return agent.q.copy(), agent.trace()
