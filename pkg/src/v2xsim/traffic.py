"""Application packet generation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import MS, ConfigError, Engine, Exponential, Uniform, draw

MIN_SIZE = 50
MAX_SIZE = 12000


class CommType(str, Enum):
    BROADCAST = "Broadcast"
    GROUPCAST = "Groupcast"
    UNICAST = "Unicast"


@dataclass(frozen=True)
class TrafficProfile:
    kind: str = "periodic"              # periodic | aperiodic | saturated
    rate_hz: float = 10.0
    size_bytes: int = 300
    base_ms: float = 50.0
    exp_mean_ms: float = 50.0
    size_range: tuple[int, int] = (300, 12000)
    priority: int = 0
    comm_type: CommType = CommType.BROADCAST
    latency_budget_ms: float = 100.0

    def __post_init__(self):
        if self.kind not in ("periodic", "aperiodic", "saturated"):
            raise ConfigError(f"unknown traffic kind {self.kind!r}")
        if self.kind == "periodic" and not self.rate_hz > 0:
            raise ConfigError("periodic traffic needs rate_hz > 0")
        lo, hi = self.size_range
        if not (MIN_SIZE <= lo <= hi <= MAX_SIZE):
            raise ConfigError(f"size_range must lie within [{MIN_SIZE}, {MAX_SIZE}]")
        if not MIN_SIZE <= self.size_bytes <= MAX_SIZE:
            raise ConfigError(f"size_bytes must lie within [{MIN_SIZE}, {MAX_SIZE}]")
        if self.kind == "aperiodic":
            Exponential(self.exp_mean_ms)
            if self.base_ms < 0:
                raise ConfigError("base_ms must be >= 0")
        if self.latency_budget_ms <= 0:
            raise ConfigError("latency_budget_ms must be > 0")

    @property
    def period_ns(self) -> int:
        return int(round(1e9 / self.rate_hz))


@dataclass(slots=True)
class Packet:
    id: int
    origin: int
    gen_time: int
    size: int
    priority: int = 0
    comm_type: CommType = CommType.BROADCAST
    latency_budget_ms: float = 100.0
    dest: tuple[int, ...] = ()

    @property
    def deadline(self) -> int:
        return self.gen_time + int(round(self.latency_budget_ms * MS))


def first_arrival(profile: TrafficProfile, rng: np.random.Generator, t: int = 0) -> int:
    if profile.kind == "periodic":
        return t + int(rng.integers(0, profile.period_ns))
    return next_arrival(profile, rng, t)


def next_arrival(profile: TrafficProfile, rng: np.random.Generator, t: int) -> int:
    if profile.kind == "periodic":
        return t + profile.period_ns
    if profile.kind == "aperiodic":
        gap_ms = profile.base_ms + draw(rng, Exponential(profile.exp_mean_ms))
        return t + max(1, int(round(gap_ms * MS)))
    raise ConfigError("saturated sources have no arrival process")


def packet_size(profile: TrafficProfile, rng: np.random.Generator) -> int:
    if profile.kind == "aperiodic":
        lo, hi = profile.size_range
        return int(draw(rng, Uniform(lo, hi, integer=True)))
    return profile.size_bytes


class PacketFactory:
    """Issues run-unique packet ids."""

    def __init__(self):
        self._ids = itertools.count()

    def make(self, origin: int, t: int, size: int, profile: TrafficProfile,
             dest: tuple[int, ...] = ()) -> Packet:
        return Packet(next(self._ids), origin, t, size, profile.priority, profile.comm_type,
                      profile.latency_budget_ms, dest)


class TrafficSource:
    """Drives one node's arrival process and hands packets to `sink`."""

    def __init__(self, engine: Engine, node: int, profile: TrafficProfile,
                 rng: np.random.Generator, factory: PacketFactory, sink, dest=()):
        self.engine = engine
        self.node = node
        self.profile = profile
        self.rng = rng
        self.factory = factory
        self.sink = sink
        self.dest = tuple(dest)
        self.generated = 0
        self.bytes = 0

    def start(self, t0: int = 0) -> None:
        if self.profile.kind == "saturated":
            return
        self.engine.schedule(first_arrival(self.profile, self.rng, t0), self._fire,
                             target=self.node, kind="pkt")

    def _fire(self) -> None:
        now = self.engine.now
        pkt = self.factory.make(self.node, now, packet_size(self.profile, self.rng), self.profile, self.dest)
        self.generated += 1
        self.bytes += pkt.size
        self.engine.schedule(next_arrival(self.profile, self.rng, now), self._fire,
                             target=self.node, kind="pkt")
        self.sink(pkt)
