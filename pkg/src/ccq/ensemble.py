"""Multi-environment ensemble Q-learning.

One Q-learner runs on each selected n-hop environment.  Every
``fusion_period`` agent steps the member tables are averaged into an ensemble
table ``Q_hat`` and each member is pulled toward it::

    Q_n <- (1 - u) Q_n + u Q_hat

with update ratio ``u``.  A member of order ``n`` takes one n-hop transition
per step.  The fuse/feedback round structure is a reconstruction: it is the
simplest loop with a tunable coupling ``u in (0, 1)`` whose limit ``u -> 1``
synchronizes all members.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .exceptions import ValidationError
from .mdp import average_policy_error, greedy_policy
from .qlearning import LearningSchedule, QAgent, QTrace, TraceSpec
from .synthesis import EnvironmentFamily

UpdateRatio = float | Callable[[int], float]


@dataclass
class EnsembleConfig:
    members: Sequence[int]
    update_ratio: UpdateRatio = 0.5
    fusion_period: int = 64
    weights: Sequence[float] | None = None

    def __post_init__(self):
        self.members = tuple(int(n) for n in self.members)
        if not self.members:
            raise ValidationError("ensemble needs at least one member")
        if len(set(self.members)) != len(self.members):
            raise ValidationError(f"duplicate members in {self.members}")
        if self.fusion_period < 1:
            raise ValidationError("fusion_period must be >= 1")
        if not callable(self.update_ratio):
            _check_ratio(self.update_ratio)
        if self.weights is None:
            self.weights = tuple(1.0 / len(self.members) for _ in self.members)
        self.weights = tuple(float(w) for w in self.weights)
        _check_weights(self.weights, len(self.members))

    def ratio(self, round_index: int) -> float:
        u = self.update_ratio(round_index) if callable(self.update_ratio) else self.update_ratio
        _check_ratio(u)
        return float(u)


def _check_ratio(u: float) -> None:
    if not 0.0 <= u <= 1.0:
        raise ValidationError(f"update ratio must lie in [0, 1], got {u!r}")


def _check_weights(weights: Sequence[float], k: int) -> None:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (k,):
        raise ValidationError(f"expected {k} weights, got {w.shape}")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValidationError(f"weights must be nonnegative and sum to 1, got {weights}")


def fuse(member_tables: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Entrywise weighted average of the member tables."""
    if not member_tables:
        raise ValidationError("nothing to fuse")
    shape = np.shape(member_tables[0])
    if any(np.shape(t) != shape for t in member_tables):
        raise ValidationError("member tables differ in shape")
    _check_weights(weights, len(member_tables))
    out = np.zeros(shape)
    for w, t in zip(weights, member_tables):
        out += w * t
    return out


def feedback(member_q: np.ndarray, ensemble_q: np.ndarray, u: float) -> np.ndarray:
    """``(1 - u) member + u ensemble``, written so that ``u = 0`` is an exact no-op."""
    _check_ratio(u)
    if np.shape(member_q) != np.shape(ensemble_q):
        raise ValidationError("member and ensemble tables differ in shape")
    return member_q + u * (ensemble_q - member_q)


@dataclass
class EnsembleState:
    """Everything a finished (or checkpointed) ensemble run produced.

    ``hat_times``/``hat_values`` record ``Q_hat`` at the tracked pairs after
    every fusion round; ``log`` holds ``(round, member, max|dQ|, ape)`` rows.
    """

    members: tuple[int, ...]
    member_q: dict[int, np.ndarray]
    q_hat: np.ndarray
    rounds: int
    traces: dict[int, QTrace] = field(default_factory=dict)
    pairs: tuple[tuple[int, int], ...] = ()
    hat_times: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    hat_values: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    log: list[tuple[int, int, float, float]] = field(default_factory=list)
    incomplete: list[int] = field(default_factory=list)

    @property
    def policy(self) -> np.ndarray:
        return greedy_policy(self.q_hat)

    def save(self, path: str | Path) -> None:
        arrays = {f"member_{n}": q for n, q in self.member_q.items()}
        meta = {
            "members": list(self.members),
            "rounds": self.rounds,
            "pairs": [list(p) for p in self.pairs],
            "incomplete": self.incomplete,
            "log": [list(r) for r in self.log],
        }
        np.savez(path, q_hat=self.q_hat, hat_times=self.hat_times, hat_values=self.hat_values,
                 meta=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "EnsembleState":
        with np.load(path) as data:
            meta = json.loads(str(data["meta"]))
            members = tuple(meta["members"])
            return cls(
                members=members,
                member_q={n: data[f"member_{n}"].copy() for n in members},
                q_hat=data["q_hat"].copy(),
                rounds=meta["rounds"],
                pairs=tuple(tuple(p) for p in meta["pairs"]),
                hat_times=data["hat_times"].copy(),
                hat_values=data["hat_values"].copy(),
                log=[tuple(r) for r in meta["log"]],
                incomplete=list(meta["incomplete"]),
            )

    def write_log(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "member", "max_abs_dq", "ape"])
            for r, n, dq, ape in self.log:
                w.writerow([r, n, repr(dq), "" if np.isnan(ape) else repr(ape)])


def run_ensemble(
    family: EnvironmentFamily,
    config: EnsembleConfig,
    schedule: LearningSchedule,
    rng: np.random.Generator,
    trace: TraceSpec | None = None,
    pi_star: np.ndarray | None = None,
    log_every: int | None = None,
) -> tuple[np.ndarray, np.ndarray, EnsembleState]:
    """Train one agent per member and couple them through fuse/feedback rounds.

    Member ``i`` draws its randomness from ``rng.spawn(K)[i]``.  Each member
    stops on its own coverage/``max_steps`` rule; rounds continue until all
    members have stopped.  ``log_every`` enables the per-round log (with APE
    columns when ``pi_star`` is given).
    """
    for n in config.members:
        if n not in family:
            raise ValidationError(f"environment of order {n} is missing from the family")
    trace = trace or TraceSpec(snapshots=False)
    rngs = rng.spawn(len(config.members))
    agents = [QAgent(family[n], schedule, r, trace) for n, r in zip(config.members, rngs)]
    pairs = tuple((int(s), int(a)) for s, a in trace.pairs)
    ts = np.array([p[0] for p in pairs], dtype=np.int64)
    ta = np.array([p[1] for p in pairs], dtype=np.int64)

    q_hat = fuse([a.q for a in agents], config.weights)
    hat_times, hat_values, log = [], [], []
    rounds = 0
    while not all(a.done for a in agents):
        logging = log_every is not None and rounds % log_every == 0
        before = [a.q.copy() for a in agents] if logging else None
        for agent in agents:
            agent.advance(config.fusion_period)
        q_hat = fuse([a.q for a in agents], config.weights)
        u = config.ratio(rounds)
        for agent in agents:
            agent.q = feedback(agent.q, q_hat, u)
        rounds += 1
        if pairs:
            hat_times.append(rounds * config.fusion_period)
            hat_values.append(q_hat[ts, ta])
        if logging:
            ape = np.nan if pi_star is None else average_policy_error(greedy_policy(q_hat), pi_star)
            for n, agent, prev in zip(config.members, agents, before):
                log.append((rounds, n, float(np.max(np.abs(agent.q - prev))), ape))

    state = EnsembleState(
        members=config.members,
        member_q={n: a.q.copy() for n, a in zip(config.members, agents)},
        q_hat=q_hat,
        rounds=rounds,
        traces={n: a.trace() for n, a in zip(config.members, agents)},
        pairs=pairs,
        hat_times=np.array(hat_times, dtype=np.int64),
        hat_values=np.array(hat_values).reshape(len(hat_values), len(pairs)),
        log=log,
        incomplete=[n for n, a in zip(config.members, agents) if a.deficit()],
    )
    return q_hat, greedy_policy(q_hat), state
