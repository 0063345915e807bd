"""Propagation, channel geometry, PER curves and reception decisions.

Everything here is a pure function over arrays so the shared medium can
evaluate many transmitter/receiver pairs per call.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import ConfigError

C_LIGHT = 299_792_458.0
THERMAL_DBM_HZ = -174.0


# ---------------------------------------------------------------------------
# Channels


@dataclass(frozen=True)
class ChannelDef:
    number: int
    center_mhz: float
    bandwidth_mhz: float

    @classmethod
    def its(cls, number: int, bandwidth_mhz: float = 10.0) -> "ChannelDef":
        return cls(int(number), 5000.0 + 5.0 * number, float(bandwidth_mhz))

    @property
    def low_mhz(self) -> float:
        return self.center_mhz - self.bandwidth_mhz / 2

    @property
    def high_mhz(self) -> float:
        return self.center_mhz + self.bandwidth_mhz / 2


def separation_mhz(a: ChannelDef, b: ChannelDef) -> float:
    gap = abs(a.center_mhz - b.center_mhz) - (a.bandwidth_mhz + b.bandwidth_mhz) / 2
    return max(0.0, gap)


@dataclass(frozen=True)
class Span:
    """Occupied frequency interval in MHz (a channel or a slice of one)."""
    low: float
    high: float

    @property
    def width(self) -> float:
        return self.high - self.low

    @classmethod
    def of(cls, ch: ChannelDef) -> "Span":
        return cls(ch.low_mhz, ch.high_mhz)


# ---------------------------------------------------------------------------
# Path loss and noise


def breakpoint_m(fc_ghz: float, h_tx: float = 0.5, h_rx: float = 0.5) -> float:
    return 4.0 * h_tx * h_rx * fc_ghz * 1e9 / C_LIGHT


def path_loss_db(d, fc_ghz: float, los=True, h_tx: float = 0.5, h_rx: float = 0.5,
                 nlos_excess_db: float = 20.0):
    """WINNER+ B1 mean path loss; d is clamped at 1 m. Vectorised over d and los."""
    d = np.maximum(np.asarray(d, dtype=float), 1.0)
    bp = breakpoint_m(fc_ghz, h_tx, h_rx)
    near = 22.7 * np.log10(d) + 41.0 + 20.0 * math.log10(fc_ghz / 5.0)
    far = (40.0 * np.log10(d) + 9.45 - 17.3 * math.log10(h_tx) - 17.3 * math.log10(h_rx)
           + 2.7 * math.log10(fc_ghz / 5.0))
    pl = np.where(d < bp, near, far)
    pl = np.where(np.asarray(los, dtype=bool), pl, pl + nlos_excess_db)
    return float(pl) if pl.ndim == 0 else pl


def noise_dbm(bandwidth_mhz: float, noise_figure_db: float = 9.0) -> float:
    return THERMAL_DBM_HZ + 10.0 * math.log10(bandwidth_mhz * 1e6) + noise_figure_db


def dbm_to_mw(x):
    return np.power(10.0, np.asarray(x, dtype=float) / 10.0)


def mw_to_dbm(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


def sinr_db(signal_dbm, interference_mw, noise_dbm_value: float):
    """S / (N + sum I) in dB; interference given already ACIR-weighted in mW."""
    s = dbm_to_mw(signal_dbm)
    return mw_to_dbm(s / (dbm_to_mw(noise_dbm_value) + np.asarray(interference_mw, dtype=float)))


def cca_busy(power_mw: float, threshold_dbm: float) -> bool:
    """Boundary inclusive; compares in dB with a tiny tolerance for round-off."""
    if power_mw <= 0:
        return False
    return 10.0 * math.log10(power_mw) >= threshold_dbm - 1e-9


# ---------------------------------------------------------------------------
# ACIR and frequency coupling


@dataclass
class AcirTable:
    points: dict[float, float] = field(default_factory=lambda: {0.0: 0.0, 10.0: 25.0, 20.0: 40.0})

    def __post_init__(self):
        pts = {float(k): float(v) for k, v in self.points.items()}
        seps = sorted(pts)
        if not seps or seps[0] != 0.0 or pts[0.0] != 0.0:
            raise ConfigError("ACIR table must map separation 0 MHz to 0 dB")
        vals = [pts[s] for s in seps]
        if any(b < a for a, b in zip(vals, vals[1:])):
            raise ConfigError("ACIR attenuation must be nondecreasing in separation")
        self._seps = np.array(seps)
        self._vals = np.array(vals)

    def attenuation_db(self, sep_mhz: float) -> float:
        if sep_mhz > self._seps[-1] + 1e-9:
            return math.inf
        return float(np.interp(sep_mhz, self._seps, self._vals))


def coupling_db(tx_span: Span, tx_channel: ChannelDef, rx_span: Span, rx_channel: ChannelDef,
                acir: AcirTable) -> float:
    """Fraction (dB, <= 0 means gain < 1) of a transmission's power landing in rx_span.

    Overlapping spans take the in-band share; different channels that do not
    overlap go through the ACIR table, scaled to the receiver's sub-span.
    Disjoint slices of one channel are orthogonal.
    """
    overlap = min(tx_span.high, rx_span.high) - max(tx_span.low, rx_span.low)
    if overlap > 1e-9:
        return 10.0 * math.log10(overlap / tx_span.width)
    if tx_channel == rx_channel:
        return -math.inf
    att = acir.attenuation_db(separation_mhz(tx_channel, rx_channel))
    if math.isinf(att):
        return -math.inf
    return -att + 10.0 * math.log10(rx_span.width / rx_channel.bandwidth_mhz)


# ---------------------------------------------------------------------------
# PER curves


@dataclass(frozen=True)
class PerCurve:
    label: tuple[str, ...]
    sinr_db: tuple[float, ...]
    per: tuple[float, ...]

    def __post_init__(self):
        if len(self.sinr_db) != len(self.per) or not self.sinr_db:
            raise ConfigError(f"PER curve {self.label}: need matching non-empty point lists")
        if any(b <= a for a, b in zip(self.sinr_db, self.sinr_db[1:])):
            raise ConfigError(f"PER curve {self.label}: SINR points must be strictly increasing")
        if any(not 0.0 <= p <= 1.0 for p in self.per):
            raise ConfigError(f"PER curve {self.label}: PER outside [0, 1]")
        if any(b > a for a, b in zip(self.per, self.per[1:])):
            raise ConfigError(f"PER curve {self.label}: PER must be nonincreasing")

    def __call__(self, sinr):
        """PER at sinr (dB); saturates to 1 below the first point and 0 above the last."""
        p = np.interp(sinr, self.sinr_db, self.per, left=1.0, right=0.0)
        return float(p) if np.ndim(p) == 0 else p

    @property
    def error_free_db(self) -> float:
        """Lowest tabulated SINR with zero PER (the last point if none is zero)."""
        for x, p in zip(self.sinr_db, self.per):
            if p == 0.0:
                return x
        return self.sinr_db[-1]

    def sinr_at_per(self, target: float) -> float:
        """Inverse lookup on the piecewise-linear curve."""
        xs, ps = np.array(self.sinr_db), np.array(self.per)
        for i in range(len(xs) - 1):
            if ps[i] >= target >= ps[i + 1] and ps[i] != ps[i + 1]:
                return float(xs[i] + (ps[i] - target) / (ps[i] - ps[i + 1]) * (xs[i + 1] - xs[i]))
        raise ValueError(f"PER {target} not bracketed by curve {self.label}")


def threshold_ramp(label: Sequence[str], threshold_db: float, span_db: float = 4.0) -> PerCurve:
    h = span_db / 2.0
    return PerCurve(tuple(label), (threshold_db - h, threshold_db + h), (1.0, 0.0))


# SINR thresholds per MCS for the default ramps. QPSK-1/2, 16QAM-1/2 and
# 64QAM-2/3 are the configured anchors; the rest are interpolated defaults.
MCS_THRESHOLD_DB = {
    "BPSK-1/2": 2.0,
    "BPSK-3/4": 3.5,
    "QPSK-1/2": 5.0,
    "QPSK-3/4": 8.0,
    "16QAM-1/2": 11.0,
    "16QAM-3/4": 14.5,
    "64QAM-2/3": 20.0,
    "64QAM-3/4": 21.5,
}


class PerTable:
    """(rat, mcs) -> PerCurve, with threshold-ramp defaults for known MCS names."""

    def __init__(self, curves: dict[tuple[str, str], PerCurve] | None = None,
                 thresholds: dict[str, float] | None = None, span_db: float = 4.0):
        self.curves = dict(curves or {})
        self.thresholds = dict(MCS_THRESHOLD_DB)
        self.thresholds.update(thresholds or {})
        self.span_db = span_db

    def get(self, rat: str, mcs: str) -> PerCurve:
        c = self.curves.get((rat, mcs)) or self.curves.get(("*", mcs))
        if c is not None:
            return c
        if mcs not in self.thresholds:
            raise ConfigError(f"no PER curve for rat={rat!r} mcs={mcs!r}")
        c = threshold_ramp((rat, mcs), self.thresholds[mcs], self.span_db)
        self.curves[(rat, mcs)] = c
        return c

    @classmethod
    def from_csv(cls, path: str | Path, **kw) -> "PerTable":
        rows: dict[tuple[str, str], list[tuple[float, float]]] = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"rat", "mcs", "sinr_db", "per"} - set(reader.fieldnames or [])
            if missing:
                raise ConfigError(f"{path}: missing PER columns {sorted(missing)}")
            for r in reader:
                rows.setdefault((r["rat"], r["mcs"]), []).append((float(r["sinr_db"]), float(r["per"])))
        curves = {}
        for key, pts in rows.items():
            pts.sort()
            curves[key] = PerCurve(key, tuple(p[0] for p in pts), tuple(p[1] for p in pts))
        return cls(curves, **kw)


def decide_reception(sinr, curve: PerCurve, gain_db, rng: np.random.Generator):
    """Bernoulli success with probability 1 - PER(sinr + gain); vectorised."""
    x = np.asarray(sinr, dtype=float) + np.asarray(gain_db, dtype=float)
    u = rng.random(x.shape) if x.ndim else rng.random()
    ok = u >= curve(x)
    return bool(ok) if np.ndim(ok) == 0 else ok


def effective_sinr_db(signal_mw, noise_mw: float, durations: Iterable[float],
                      interference_mw: Iterable[float]) -> float:
    """SINR over a frame whose interference changes piecewise: the interference
    energy is averaged over the frame duration before forming the ratio."""
    dur = np.asarray(list(durations), dtype=float)
    inter = np.asarray(list(interference_mw), dtype=float)
    total = dur.sum()
    i_avg = float((dur * inter).sum() / total) if total > 0 else 0.0
    return float(10.0 * math.log10(signal_mw / (noise_mw + i_avg)))
