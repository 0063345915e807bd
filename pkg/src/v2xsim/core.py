"""Discrete-event engine, integer-nanosecond clock and seeded random streams."""

from __future__ import annotations

import heapq
import itertools
import math
import zlib
from dataclasses import dataclass, field
from typing import Any, Callable, TextIO

import numpy as np

# Time base: one tick is one nanosecond.
NS = 1
US = 1_000
MS = 1_000_000
S = 1_000_000_000


class ConfigError(ValueError):
    """Invalid configuration or parameter; maps to CLI exit code 2."""


class PolicyError(ConfigError):
    """A request conflicts with a node's current protocol state."""


def us(x: float) -> int:
    return int(round(x * US))


def ms(x: float) -> int:
    return int(round(x * MS))


def seconds(x: float) -> int:
    return int(round(x * S))


@dataclass(order=True, slots=True)
class Event:
    time: int
    seq: int
    target: int = field(compare=False, default=-1)
    kind: str = field(compare=False, default="event")
    callback: Callable[..., Any] | None = field(compare=False, default=None, repr=False)
    args: tuple = field(compare=False, default=(), repr=False)
    cancelled: bool = field(compare=False, default=False)


class Engine:
    """Single-threaded run-to-completion scheduler ordered by (time, seq)."""

    def __init__(self, trace: TextIO | None = None):
        self._queue: list[tuple[int, int, Event]] = []     # (time, seq, event): C-level ordering
        self._seq = itertools.count()
        self.now = 0
        self.dispatched = 0
        self.trace = trace

    def schedule(self, time: int, callback: Callable[..., Any], *args: Any,
                 target: int = -1, kind: str = "event") -> Event:
        time = int(time)
        if time < self.now:
            raise ConfigError(f"event {kind!r} scheduled in the past: {time} < {self.now}")
        ev = Event(time, next(self._seq), target, kind, callback, args)
        heapq.heappush(self._queue, (time, ev.seq, ev))
        return ev

    def schedule_in(self, delay: int, callback: Callable[..., Any], *args: Any,
                    target: int = -1, kind: str = "event") -> Event:
        return self.schedule(self.now + int(delay), callback, *args, target=target, kind=kind)

    def push(self, event: Event) -> Event:
        """Enqueue a pre-built event; its seq is reassigned to issue order."""
        if event.time < self.now:
            raise ConfigError(f"event {event.kind!r} scheduled in the past")
        event.seq = next(self._seq)
        heapq.heappush(self._queue, (event.time, event.seq, event))
        return event

    @staticmethod
    def cancel(event: Event | None) -> None:
        if event is not None:
            event.cancelled = True

    def pending(self) -> int:
        return sum(1 for _, _, e in self._queue if not e.cancelled)

    def run_until(self, t_end: int) -> int:
        count = 0
        q = self._queue
        trace = self.trace
        pop = heapq.heappop
        while q and q[0][0] <= t_end:
            ev = pop(q)[2]
            if ev.cancelled:
                continue
            self.now = ev.time
            if trace is not None:
                trace.write(f"{ev.time},{ev.seq},{ev.target},{ev.kind}\n")
            if ev.callback is not None:
                ev.callback(*ev.args)
            count += 1
        self.now = max(self.now, int(t_end))
        self.dispatched += count
        return count


# ---------------------------------------------------------------------------
# Random streams


def _purpose_key(purpose: str | int) -> int:
    if isinstance(purpose, int):
        return purpose
    return zlib.crc32(purpose.encode("utf-8"))


class RngFactory:
    """Hands out one independent Philox stream per (node, purpose)."""

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self._cache: dict[tuple[int, int], np.random.Generator] = {}

    def stream(self, node: int, purpose: str | int) -> np.random.Generator:
        key = (int(node) + 1, _purpose_key(purpose))  # +1 so node -1 (global) is valid
        gen = self._cache.get(key)
        if gen is None:
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=key)
            gen = np.random.Generator(np.random.Philox(ss))
            self._cache[key] = gen
        return gen


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float
    integer: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high)) or self.high < self.low:
            raise ConfigError(f"uniform needs finite low <= high, got [{self.low}, {self.high}]")


@dataclass(frozen=True)
class Exponential:
    mean: float

    def __post_init__(self):
        if not (self.mean > 0 and math.isfinite(self.mean)):
            raise ConfigError(f"exponential mean must be > 0, got {self.mean}")


@dataclass(frozen=True)
class Bernoulli:
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"bernoulli p must lie in [0, 1], got {self.p}")


Distribution = Uniform | Exponential | Bernoulli


def draw(rng: np.random.Generator, dist: Distribution) -> float:
    if isinstance(dist, Uniform):
        if dist.integer:
            return int(rng.integers(int(dist.low), int(dist.high) + 1))
        return float(rng.uniform(dist.low, dist.high))
    if isinstance(dist, Exponential):
        return float(rng.exponential(dist.mean))
    if isinstance(dist, Bernoulli):
        return int(rng.random() < dist.p)
    raise ConfigError(f"unknown distribution {dist!r}")
