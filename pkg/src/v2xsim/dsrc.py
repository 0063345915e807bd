"""802.11p OFDM timing, EDCA parameters and the contention state machine.

The same `CsmaStation` drives 802.11p, 802.11bd and Wi-Fi nodes; only the
contention-window policy differs (fixed for broadcast V2X, doubling for
acknowledged Wi-Fi).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .core import US, ConfigError, Engine, Event

# data bits per OFDM symbol in a 10 MHz channel (half the 20 MHz symbol rate)
BITS_PER_SYMBOL_10MHZ = {
    "BPSK-1/2": 24,
    "BPSK-3/4": 36,
    "QPSK-1/2": 48,
    "QPSK-3/4": 72,
    "16QAM-1/2": 96,
    "16QAM-3/4": 144,
    "64QAM-2/3": 192,
    "64QAM-3/4": 216,
}
MCS_INDEX = {name: i for i, name in enumerate(BITS_PER_SYMBOL_10MHZ)}
MCS_BY_INDEX = {i: name for name, i in MCS_INDEX.items()}

SYMBOL_NS = 8 * US
PREAMBLE_NS = 32 * US
SIG_NS = 8 * US
SERVICE_BITS = 16
TAIL_BITS = 6
MAX_PAYLOAD = 4095


def bits_per_symbol(mcs: str) -> int:
    try:
        return BITS_PER_SYMBOL_10MHZ[mcs]
    except KeyError:
        raise ConfigError(f"unsupported MCS {mcs!r}") from None


def data_symbols(payload: int, mcs: str) -> int:
    return math.ceil((SERVICE_BITS + 8 * payload + TAIL_BITS) / bits_per_symbol(mcs))


def frame_duration(payload: int, mcs: str = "QPSK-1/2") -> int:
    """Airtime in ns of a 10 MHz 802.11p PPDU."""
    if not 0 <= payload <= MAX_PAYLOAD:
        raise ConfigError(f"payload {payload} B outside [0, {MAX_PAYLOAD}]")
    return PREAMBLE_NS + SIG_NS + SYMBOL_NS * data_symbols(payload, mcs)


@dataclass(frozen=True)
class EdcaParams:
    aifsn: int = 2
    cw: int = 15
    slot_ns: int = 13 * US
    sifs_ns: int = 32 * US
    cw_max: int | None = None   # None: fixed window (no exponential backoff)
    aifs_override_ns: int | None = None

    def __post_init__(self):
        if self.aifsn < 0 or self.cw < 0 or self.slot_ns <= 0 or self.sifs_ns < 0:
            raise ConfigError("EDCA parameters must be non-negative with a positive slot")
        if self.cw_max is not None and self.cw_max < self.cw:
            raise ConfigError("cw_max must be >= cw")

    @property
    def aifs_ns(self) -> int:
        if self.aifs_override_ns is not None:
            return self.aifs_override_ns
        return self.sifs_ns + self.aifsn * self.slot_ns


class Phase(str, Enum):
    IDLE = "Idle"
    AIFS = "Aifs"
    BACKOFF = "Backoff"
    TRANSMITTING = "Transmitting"


class CsmaStation:
    """Carrier-sense access with a frozen-on-busy backoff counter.

    Countdown completion is scheduled analytically; a busy notification
    cancels it and subtracts the idle slots that actually elapsed after AIFS.
    """

    def __init__(self, engine: Engine, node: int, params: EdcaParams, rng: np.random.Generator,
                 on_access: Callable[["CsmaStation"], None]):
        self.engine = engine
        self.node = node
        self.p = params
        self.rng = rng
        self.on_access = on_access
        self.phase = Phase.IDLE
        self.busy = False
        self.counter = 0
        self.cw = params.cw
        self.resume_at = 0          # start of the current idle period
        self._ev: Event | None = None
        self.backoff_draws: list[int] = []
        self.accesses = 0

    # medium notifications ------------------------------------------------
    def medium_busy(self, t: int) -> None:
        self.busy = True
        if self.phase not in (Phase.AIFS, Phase.BACKOFF) or self._ev is None:
            return
        if self._ev.time <= t:
            return      # countdown ends this instant: the decision is already made
        Engine.cancel(self._ev)
        self._ev = None
        counting_from = self.resume_at + self.p.aifs_ns
        if t > counting_from:
            elapsed = (t - counting_from) // self.p.slot_ns
            self.counter -= min(self.counter, elapsed)
        self.phase = Phase.BACKOFF if t >= counting_from else Phase.AIFS

    def medium_idle(self, t: int) -> None:
        self.busy = False
        if self.phase in (Phase.AIFS, Phase.BACKOFF) and self._ev is None:
            self._arm(t)

    # contention ------------------------------------------------------------
    def request(self) -> None:
        """A frame is ready; start contention unless already contending."""
        if self.phase is not Phase.IDLE:
            return
        self.counter = int(self.rng.integers(0, self.cw + 1))
        self.backoff_draws.append(self.counter)
        self.phase = Phase.AIFS
        if not self.busy:
            self._arm(self.engine.now)

    def _arm(self, t: int) -> None:
        self.resume_at = t
        fire = t + self.p.aifs_ns + self.counter * self.p.slot_ns
        self._ev = self.engine.schedule(fire, self._expire, target=self.node, kind="backoff")

    def _expire(self) -> None:
        self._ev = None
        self.phase = Phase.TRANSMITTING
        self.accesses += 1
        self.on_access(self)

    def done(self, success: bool | None = None, more: bool = False) -> None:
        """Finish an access; `success` drives the window for acknowledged traffic."""
        self.phase = Phase.IDLE
        if self.p.cw_max is not None and success is not None:
            self.cw = self.p.cw if success else min(2 * self.cw + 1, self.p.cw_max)
        if more:
            self.request()


class DropHeadQueue:
    """Bounded FIFO that evicts its oldest entry on overflow."""

    def __init__(self, depth: int):
        if depth < 1:
            raise ConfigError("queue depth must be >= 1")
        self.q: deque = deque()
        self.depth = depth
        self.dropped = 0

    def push(self, item):
        evicted = None
        if len(self.q) >= self.depth:
            evicted = self.q.popleft()
            self.dropped += 1
        self.q.append(item)
        return evicted

    def pop(self):
        return self.q.popleft()

    def push_front(self, item) -> None:
        self.q.appendleft(item)

    def __len__(self) -> int:
        return len(self.q)
