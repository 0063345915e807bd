"""802.11bd (NGV) frame formats, retransmission policy, combining gains and
capability tracking."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .core import S, US, ConfigError, PolicyError
from .dsrc import MCS_INDEX, PREAMBLE_NS, SIG_NS, SYMBOL_NS, bits_per_symbol, data_symbols, \
    frame_duration


class FrameFormat(str, Enum):
    LEGACY_11P = "Legacy11p"
    INTEROP_APPEND = "InteropAppend"
    PARITY_APPEND = "ParityAppend"
    NGV_ONLY = "NgvOnly"


class RetxMode(str, Enum):
    BURST = "Burst"
    PER_EDCA = "PerEdca"


class RxClass(str, Enum):
    P11 = "11p"
    BD11 = "11bd"


class CapabilityMode(str, Enum):
    LEGACY_COMPATIBLE = "LegacyCompatible"
    NGV_NATIVE = "NgvNative"


@dataclass(frozen=True)
class Portion:
    duration: int
    mcs: str
    payload: int = 0


@dataclass(frozen=True)
class FrameDescriptor:
    format: FrameFormat
    legacy: Portion
    ngv: Portion | None = None
    parity: Portion | None = None
    dcm: bool = False
    retx_index: int = 1
    retx_total: int = 1
    ngv_marked: bool = True      # capability mark in the MAC header

    @property
    def duration(self) -> int:
        d = self.legacy.duration
        if self.ngv is not None:
            d += self.ngv.duration
        if self.parity is not None:
            d += self.parity.duration
        return d

    def decodable_mcs(self, rx_class: RxClass) -> str | None:
        """MCS of the portion a receiver class decodes, or None if none."""
        if rx_class is RxClass.P11:
            if self.format is FrameFormat.NGV_ONLY:
                return None
            return self.legacy.mcs
        if self.format in (FrameFormat.INTEROP_APPEND, FrameFormat.NGV_ONLY):
            return self.ngv.mcs
        return self.legacy.mcs


@dataclass
class NgvParams:
    midambles: bool = True
    midamble_interval: int = 8         # data symbols per midamble
    downclock: int = 2                 # 2x, 4x or 8x down-clocked numerology
    parity_overhead: float = 0.25
    parity_gap_ns: int = 0
    cbr_thresholds: tuple[float, float] = (0.3, 0.6)

    def __post_init__(self):
        if self.downclock not in (2, 4, 8):
            raise ConfigError("downclock must be 2, 4 or 8")
        if self.midamble_interval < 1:
            raise ConfigError("midamble_interval must be >= 1")
        if not 0.0 <= self.parity_overhead <= 1.0:
            raise ConfigError("parity_overhead must lie in [0, 1]")
        lo, hi = self.cbr_thresholds
        if not 0.0 <= lo <= hi <= 1.0:
            raise ConfigError("cbr thresholds must satisfy 0 <= low <= high <= 1")

    @property
    def symbol_ns(self) -> int:
        # 2x keeps the 8 us 802.11p symbol; each further halving doubles it
        return SYMBOL_NS * (self.downclock // 2)


HIGH_MCS = {"64QAM-2/3", "64QAM-3/4"}


def ngv_portion_duration(payload: int, mcs: str, params: NgvParams) -> int:
    scale = params.downclock // 2
    # the wider FFT of a down-clocked numerology carries proportionally more bits
    n = math.ceil((16 + 8 * payload + 6) / (bits_per_symbol(mcs) * scale))
    mids = (n - 1) // params.midamble_interval if params.midambles else 0
    return (n + mids) * params.symbol_ns


def build_frame(payload: int, fmt: FrameFormat | str, mcs_legacy: str = "QPSK-1/2",
                mcs_ngv: str = "QPSK-1/2", params: NgvParams | None = None,
                capability: CapabilityMode = CapabilityMode.NGV_NATIVE,
                interoperable: bool = True, dcm: bool = False,
                ngv_origin: bool = True) -> FrameDescriptor:
    """Lay out one PPDU. `ngv_origin` is False only for frames sent by 802.11p
    devices; 802.11bd senders mark their capability even in legacy format."""
    params = params or NgvParams()
    fmt = FrameFormat(fmt)
    if fmt is FrameFormat.NGV_ONLY and capability is CapabilityMode.LEGACY_COMPATIBLE and interoperable:
        raise PolicyError("NgvOnly frames are not allowed while legacy neighbours are present")
    if fmt in (FrameFormat.INTEROP_APPEND, FrameFormat.NGV_ONLY) and mcs_ngv in HIGH_MCS \
            and not params.midambles:
        raise PolicyError(f"{mcs_ngv} requires midambles")
    legacy = Portion(frame_duration(payload, mcs_legacy), mcs_legacy, payload)
    if fmt is FrameFormat.LEGACY_11P:
        return FrameDescriptor(fmt, legacy, ngv_marked=ngv_origin)
    if fmt is FrameFormat.INTEROP_APPEND:
        ngv = Portion(ngv_portion_duration(payload, mcs_ngv, params), mcs_ngv, payload)
        return FrameDescriptor(fmt, legacy, ngv=ngv)
    if fmt is FrameFormat.PARITY_APPEND:
        tail_syms = math.ceil(params.parity_overhead * data_symbols(payload, mcs_legacy))
        parity = Portion(params.parity_gap_ns + tail_syms * SYMBOL_NS, mcs_legacy, 0) if tail_syms else None
        return FrameDescriptor(fmt, legacy, parity=parity)
    # NgvOnly: legacy receivers only see the legacy preamble and SIG, then defer
    pre = Portion(PREAMBLE_NS + SIG_NS, mcs_legacy, 0)
    ngv = Portion(ngv_portion_duration(payload, mcs_ngv, params), mcs_ngv, payload)
    return FrameDescriptor(fmt, pre, ngv=ngv, dcm=dcm)


def retransmission_count(cbr: float, thresholds: tuple[float, float] = (0.3, 0.6)) -> int:
    if not 0.0 <= cbr <= 1.0:
        raise ConfigError(f"cbr must lie in [0, 1], got {cbr}")
    lo, hi = thresholds
    if cbr < lo:
        return 3
    if cbr < hi:
        return 2
    return 1


def burst_schedule(start: int, durations: list[int], sifs_ns: int = 32 * US) -> list[tuple[int, int]]:
    """Back-to-back copies inside one access, separated by SIFS."""
    out, t = [], start
    for d in durations:
        out.append((t, t + d))
        t += d + sifs_ns
    return out


@dataclass
class CombiningGainTable:
    retx_11bd: dict[int, float] = field(default_factory=lambda: {1: 0.0, 2: 3.0, 3: 8.0})
    retx_11p: dict[int, float] = field(default_factory=lambda: {1: 0.0, 2: 0.5, 3: 1.7})
    parity_11bd: float = 2.0
    parity_11p: float = 0.0
    dcm_by_mcs_index: dict[int, float] = field(default_factory=lambda: {0: 4.0, 1: 0.6, 2: 2.0})

    def gain_db(self, frame: FrameDescriptor, k: int, rx_class: RxClass) -> float:
        """Best single gain applicable; gains from different mechanisms do not stack."""
        cands = [0.0]
        table = self.retx_11bd if rx_class is RxClass.BD11 else self.retx_11p
        if k > 1:
            cands.append(table.get(k, max(table.values())))
        if frame.format is FrameFormat.PARITY_APPEND and frame.parity is not None:
            cands.append(self.parity_11bd if rx_class is RxClass.BD11 else self.parity_11p)
        if frame.dcm and frame.format is FrameFormat.NGV_ONLY and rx_class is RxClass.BD11:
            cands.append(self.dcm_by_mcs_index.get(MCS_INDEX.get(frame.ngv.mcs, -1), 0.0))
        return max(cands)


@dataclass
class CapabilityState:
    timeout_ns: int = 5 * S
    deadline: int = -1        # legacy neighbour considered present while now < deadline

    def mode(self, t: int) -> CapabilityMode:
        return CapabilityMode.LEGACY_COMPATIBLE if t < self.deadline else CapabilityMode.NGV_NATIVE

    def update(self, frame: FrameDescriptor, t: int) -> "CapabilityState":
        if not frame.ngv_marked:
            self.deadline = t + self.timeout_ns
        return self


def update_capability(state: CapabilityState, frame: FrameDescriptor, t: int) -> CapabilityState:
    return state.update(frame, t)
