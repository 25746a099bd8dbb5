"""Generators for the two wireless-network MDP families.

Both models use a mixed-radix state encoding (most significant digit first)
and two actions.  Dynamics are deliberately simple queueing/energy models:
every queue moves by at most one packet per step, departures are resolved
before arrivals, and buffers saturate at capacity.

MISO energy-harvesting relay network
    state  = (battery, source buffer, relay_1 buffer, ..., relay_R buffer)
    action = 0 idle, 1 transmit one packet from the source to the least
             loaded relay (needs one energy unit, a packet and a free relay)
    Each step every non-empty relay forwards one packet with probability
    ``relay_forward_prob``; energy and data then arrive as Bernoulli events.
    A data arrival to a full buffer is dropped and charged
    ``overflow_penalty``.

MIMO network
    state  = (queue, channel_1, ..., channel_M)
    action = 0 hold, 1 transmit
    Each antenna succeeds with probability ``(h + 1) / (C + 1)`` at channel
    level ``h``; the packet departs if any antenna succeeds.  Channels follow
    independent chains with ``P(j | i)`` proportional to
    ``exp(-skew * |i - j|)``.  The cost is ``holding_cost`` scaled up by
    ``1 + load_weight * q / (queue_levels - 1)``, plus, when transmitting,
    ``transmit_cost * (C - best) / C`` where ``best`` is the best channel level.
    Defaults keep ``c_max / c_min`` near 1.5 for both families.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import prod

import numpy as np

from .exceptions import SizeLimitError, ValidationError
from .mdp import TabularMdp

DEFAULT_MAX_STATES = 4000


class MixedRadix:
    """Bijection between digit tuples and ``range(prod(radices))``."""

    def __init__(self, radices):
        self.radices = tuple(int(r) for r in radices)
        if any(r < 1 for r in self.radices):
            raise ValidationError(f"radices must be positive, got {self.radices}")
        self.size = prod(self.radices)
        weights = [1] * len(self.radices)
        for i in range(len(self.radices) - 2, -1, -1):
            weights[i] = weights[i + 1] * self.radices[i + 1]
        self.weights = np.array(weights, dtype=np.int64)

    def encode(self, digits) -> np.ndarray | int:
        d = np.asarray(digits, dtype=np.int64)
        return d @ self.weights if d.ndim > 1 else int(d @ self.weights)

    def decode(self, index) -> np.ndarray:
        idx = np.asarray(index, dtype=np.int64)
        r = np.array(self.radices, dtype=np.int64)
        return (idx[..., None] // self.weights) % r

    def all_digits(self) -> np.ndarray:
        return self.decode(np.arange(self.size))


def _check_prob(name: str, p: float, closed: bool = False) -> None:
    ok = 0.0 <= p <= 1.0 if closed else 0.0 < p < 1.0
    if not ok:
        raise ValidationError(f"{name} must lie in {'[0, 1]' if closed else '(0, 1)'}, got {p!r}")


def _check_size(n_states: int, cap: int) -> None:
    if n_states > cap:
        raise SizeLimitError(f"model would have {n_states} states, above the cap of {cap}")


@dataclass(frozen=True)
class MisoParams:
    battery_levels: int = 4
    buffer_levels: int = 5
    relay_count: int = 2
    relay_levels: int = 3
    energy_arrival_prob: float = 0.5
    data_arrival_prob: float = 0.5
    relay_forward_prob: float = 0.6
    transmit_cost: float = 1.2
    idle_cost: float = 1.0
    overflow_penalty: float = 0.6
    discount: float = 0.95
    max_states: int = DEFAULT_MAX_STATES

    @property
    def codec(self) -> MixedRadix:
        return MixedRadix(
            (self.battery_levels, self.buffer_levels) + (self.relay_levels,) * self.relay_count
        )

    @property
    def n_states(self) -> int:
        return self.battery_levels * self.buffer_levels * self.relay_levels ** self.relay_count

    def check(self) -> None:
        for name in ("battery_levels", "buffer_levels", "relay_levels"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.relay_count < 1:
            raise ValidationError("relay_count must be >= 1")
        # energy_arrival_prob = 0 is allowed: it freezes the battery.
        _check_prob("energy_arrival_prob", self.energy_arrival_prob, closed=True)
        _check_prob("data_arrival_prob", self.data_arrival_prob, closed=True)
        _check_prob("relay_forward_prob", self.relay_forward_prob, closed=True)
        for name in ("transmit_cost", "idle_cost", "overflow_penalty"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        _check_prob("discount", self.discount)
        _check_size(self.n_states, self.max_states)


@dataclass(frozen=True)
class MimoParams:
    queue_levels: int = 10
    antenna_count: int = 2
    channel_states: int = 3
    channel_transition_skew: float = 1.0
    arrival_prob: float = 0.5
    transmit_cost: float = 0.3
    holding_cost: float = 1.0
    load_weight: float = 0.25
    discount: float = 0.95
    max_states: int = DEFAULT_MAX_STATES

    @property
    def codec(self) -> MixedRadix:
        return MixedRadix((self.queue_levels,) + (self.channel_states,) * self.antenna_count)

    @property
    def n_states(self) -> int:
        return self.queue_levels * self.channel_states ** self.antenna_count

    def check(self) -> None:
        for name in ("queue_levels", "antenna_count", "channel_states"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.channel_transition_skew < 0:
            raise ValidationError("channel_transition_skew must be >= 0")
        _check_prob("arrival_prob", self.arrival_prob, closed=True)
        for name in ("transmit_cost", "holding_cost"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.load_weight < 0:
            raise ValidationError("load_weight must be >= 0")
        _check_prob("discount", self.discount)
        _check_size(self.n_states, self.max_states)


def build_miso(params: MisoParams) -> TabularMdp:
    params.check()
    codec = params.codec
    digits = codec.all_digits()
    n = codec.size
    R = params.relay_count
    top_b, top_q, top_r = params.battery_levels - 1, params.buffer_levels - 1, params.relay_levels - 1
    pe, pd, pf = params.energy_arrival_prob, params.data_arrival_prob, params.relay_forward_prob

    p = np.zeros((n, n, 2))
    overflow = np.zeros((n, 2))
    rows = np.arange(n)
    events = itertools.product((0, 1), repeat=R + 2)
    for ev in events:
        fwd, e_arr, d_arr = np.array(ev[:R]), ev[R], ev[R + 1]
        w = prod(pf if f else 1.0 - pf for f in fwd)
        w *= pe if e_arr else 1.0 - pe
        w *= pd if d_arr else 1.0 - pd
        if w == 0.0:
            continue
        for a in (0, 1):
            b = digits[:, 0].copy()
            q = digits[:, 1].copy()
            relays = digits[:, 2:].copy()
            relays -= (relays > 0) & (fwd[None, :] == 1)
            if a == 1:
                target = np.argmin(relays, axis=1)
                room = relays[rows, target] < top_r
                sent = (b >= 1) & (q >= 1) & room
                b -= sent
                q -= sent
                relays[rows[sent], target[sent]] += 1
            b = np.minimum(b + e_arr, top_b)
            if d_arr:
                overflow[:, a] += w * (q == top_q)
                q = np.minimum(q + 1, top_q)
            nxt = codec.encode(np.column_stack([b, q, relays]))
            np.add.at(p, (rows, nxt, a), w)

    base = np.array([params.idle_cost, params.transmit_cost])
    cost = base[None, :] + params.overflow_penalty * overflow
    return TabularMdp(p, cost, params.discount)


def channel_matrix(levels: int, skew: float) -> np.ndarray:
    """Single-antenna channel chain; ``skew = 0`` gives identical uniform rows."""
    i = np.arange(levels)
    w = np.exp(-skew * np.abs(i[:, None] - i[None, :]))
    return w / w.sum(axis=1, keepdims=True)


def build_mimo(params: MimoParams) -> TabularMdp:
    params.check()
    M, C = params.antenna_count, params.channel_states
    n_chan = C ** M
    n = params.n_states
    top_q = params.queue_levels - 1

    single = channel_matrix(C, params.channel_transition_skew)
    joint = single
    for _ in range(M - 1):
        joint = np.kron(joint, single)

    chan = MixedRadix((C,) * M).all_digits()
    fail = np.prod(1.0 - (chan + 1.0) / (C + 1.0), axis=1)
    success = 1.0 - fail
    best = chan.max(axis=1)

    p = np.zeros((n, n, 2))
    cost = np.zeros((n, 2))
    lam = params.arrival_prob
    for q in range(params.queue_levels):
        block = slice(q * n_chan, (q + 1) * n_chan)
        for a in (0, 1):
            dep = success if a == 1 else np.zeros(n_chan)
            # departure first, then arrival (dropped when the queue is full)
            outcomes = {}
            for departs, pdep in ((1, dep), (0, 1.0 - dep)):
                q_mid = q - departs if q >= 1 else q
                for arrives, parr in ((1, lam), (0, 1.0 - lam)):
                    q_new = min(q_mid + arrives, top_q)
                    outcomes[q_new] = outcomes.get(q_new, 0.0) + pdep * parr
            for q_new, w in outcomes.items():
                dst = slice(q_new * n_chan, (q_new + 1) * n_chan)
                p[block, dst, a] += w[:, None] * joint
            cost[block, a] = params.holding_cost * (1.0 + params.load_weight * q / max(top_q, 1))
            if a == 1:
                cost[block, a] += params.transmit_cost * (C - best) / C
    return TabularMdp(p, cost, params.discount)
