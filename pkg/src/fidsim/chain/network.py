"""Deterministic in-memory message bus with per-edge latency ticks and
optional drop/duplicate fault injection.

Delivery order is a total order over (tick, sequence number), so a fixed seed
always replays the identical schedule. Handlers are plain callables
``handler(msg, bus)`` that may send further messages.
"""

from __future__ import annotations

import heapq
from collections import Counter
from dataclasses import dataclass, field

from ..util import rng_from


@dataclass(frozen=True)
class Message:
    src: str
    dst: str
    kind: str
    body: dict
    tick: int


@dataclass
class FaultPlan:
    drop_prob: float = 0.0
    duplicate_prob: float = 0.0
    # message kinds exempt from faults (e.g. local timers)
    immune_kinds: tuple = ("timer",)


class MessageBus:
    def __init__(
        self,
        latency_fn,
        seed: int = 0,
        faults: FaultPlan | None = None,
        max_ticks: int = 1_000_000,
    ):
        """``latency_fn(src, dst, kind) -> int`` ticks; must be >= 1."""
        self.latency_fn = latency_fn
        self.faults = faults or FaultPlan()
        self.rng = rng_from(seed, "bus")
        self.max_ticks = max_ticks
        self.now = 0
        self._seq = 0
        self._queue: list = []
        self.sent = Counter()  # per message kind, counted at send time
        self.dropped = Counter()
        self.delivered = Counter()

    def _schedule(self, msg: Message) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (msg.tick, self._seq, msg))

    def send(self, src: str, dst: str, kind: str, body: dict) -> None:
        self.sent[kind] += 1
        fault_ok = kind not in self.faults.immune_kinds
        if fault_ok and self.faults.drop_prob > 0 and self.rng.random() < self.faults.drop_prob:
            self.dropped[kind] += 1
            return
        latency = max(1, int(self.latency_fn(src, dst, kind)))
        self._schedule(Message(src, dst, kind, body, self.now + latency))
        if fault_ok and self.faults.duplicate_prob > 0 and self.rng.random() < self.faults.duplicate_prob:
            extra = max(1, int(self.latency_fn(src, dst, kind)))
            self._schedule(Message(src, dst, kind, body, self.now + latency + extra))

    def broadcast(self, src: str, dsts, kind: str, body: dict) -> None:
        for dst in dsts:
            if dst != src:
                self.send(src, dst, kind, body)

    def set_timer(self, owner: str, at_tick: int, kind: str, body: dict | None = None) -> None:
        """Self-addressed message delivered at an absolute tick; never faulted."""
        self._schedule(Message(owner, owner, "timer", {"timer_kind": kind, **(body or {})}, at_tick))

    def run(self, handlers: dict) -> int:
        """Pump until the queue drains or max_ticks passes; returns final tick."""
        while self._queue:
            tick, _seq, msg = heapq.heappop(self._queue)
            if tick > self.max_ticks:
                break
            self.now = max(self.now, tick)
            handler = handlers.get(msg.dst)
            if handler is not None:
                self.delivered[msg.kind] += 1
                handler(msg, self)
        return self.now


def uniform_latency(seed: int, low: int = 1, high: int = 3):
    """Random-but-frozen latency per (src, dst, kind) edge."""

    def latency(src: str, dst: str, kind: str) -> int:
        edge_rng = rng_from(seed, "latency", src, dst, kind)
        return int(edge_rng.integers(low, high + 1))

    return latency


def constant_latency(ticks: int = 1):
    def latency(src: str, dst: str, kind: str) -> int:
        return ticks

    return latency
