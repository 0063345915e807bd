"""Shared on-air state: active transmissions, received power, carrier sense."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .core import ConfigError, Engine
from .radio import (AcirTable, ChannelDef, Span, coupling_db, dbm_to_mw, noise_dbm,
                    path_loss_db)
from .scenario import NodeSet

POWER_MIN_DBM = -10.0
POWER_MAX_DBM = 33.0
SINR_AVERAGING = ("energy", "capacity", "capped")


@dataclass(eq=False, slots=True)
class TxRecord:
    """One on-air emission."""
    rid: int
    tx: int
    rat: str
    channel: ChannelDef
    span: Span
    power_dbm: float
    start: int
    end: int
    frame: Any = None
    base_dbm: np.ndarray | None = None   # tx power minus path loss at every node
    base_mw: np.ndarray | None = None    # the same in mW
    overlaps: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.end <= self.start:
            raise ConfigError(f"transmission must have end > start ({self.start}, {self.end})")
        if not POWER_MIN_DBM <= self.power_dbm <= POWER_MAX_DBM:
            raise ConfigError(f"tx power {self.power_dbm} dBm outside [{POWER_MIN_DBM}, {POWER_MAX_DBM}]")


@dataclass
class RadioParams:
    fc_ghz: float = 5.9
    h_tx_m: float = 0.5
    h_rx_m: float = 0.5
    nlos_excess_db: float = 20.0
    noise_figure_db: float = 9.0
    shadowing_sigma_db: float = 0.0
    acir: AcirTable = field(default_factory=AcirTable)
    # how time-varying interference over one frame maps to a single SINR:
    # "energy" averages interference power, "capacity" averages log2(1 + SINR),
    # "capped" does the same after clipping each segment at the error-free SINR
    sinr_averaging: str = "capped"

    def __post_init__(self):
        if self.sinr_averaging not in SINR_AVERAGING:
            raise ConfigError(f"sinr_averaging must be one of {SINR_AVERAGING}")


class CcaGroup:
    """Carrier-sense bookkeeping for a set of nodes listening on one span."""

    def __init__(self, nodes: np.ndarray, thresholds_dbm: np.ndarray, channel: ChannelDef,
                 callback: Callable[[np.ndarray, bool, int], None] | None = None,
                 span: Span | None = None):
        self.nodes = np.asarray(nodes, dtype=int)
        self.thr_mw = dbm_to_mw(np.broadcast_to(np.asarray(thresholds_dbm, float), self.nodes.shape)) \
            * (1 - 1e-9)
        self.channel = channel
        self.span = span or Span.of(channel)
        self.callback = callback
        self.sensed = np.zeros(len(self.nodes))
        self.busy = np.zeros(len(self.nodes), dtype=bool)
        self.busy_since = np.zeros(len(self.nodes), dtype=np.int64)
        self.busy_ns = np.zeros(len(self.nodes), dtype=np.int64)
        self.pos = {int(n): k for k, n in enumerate(self.nodes)}

    def set_thresholds(self, thresholds_dbm) -> None:
        self.thr_mw = dbm_to_mw(np.broadcast_to(np.asarray(thresholds_dbm, float), self.nodes.shape)) \
            * (1 - 1e-9)

    def busy_time(self, k: int, now: int) -> int:
        extra = now - self.busy_since[k] if self.busy[k] else 0
        return int(self.busy_ns[k] + extra)


class Medium:
    def __init__(self, engine: Engine, nodes: NodeSet, params: RadioParams | None = None,
                 shadow_rng: np.random.Generator | None = None, history_ns: int = 20_000_000):
        self.engine = engine
        self.nodes = nodes
        self.p = params or RadioParams()
        self.active: list[TxRecord] = []
        self.recent: list[TxRecord] = []
        self.history_ns = history_ns
        self.groups: list[CcaGroup] = []
        self._next_id = 0
        self._coupling: dict[tuple, tuple[float, float]] = {}
        self._shadow_rng = shadow_rng
        self.observers: list[Callable[[TxRecord], None]] = []
        self.log: list[tuple[int, int, str, int, int]] | None = None

    # -- power -------------------------------------------------------------
    def new_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def noise_dbm(self, bandwidth_mhz: float) -> float:
        return noise_dbm(bandwidth_mhz, self.p.noise_figure_db)

    def noise_mw(self, bandwidth_mhz: float) -> float:
        return float(dbm_to_mw(self.noise_dbm(bandwidth_mhz)))

    def base_power(self, tx: int, power_dbm: float, t: int) -> np.ndarray:
        d = self.nodes.distances_from(tx, t)
        los = ~self.nodes.nlos_from(tx, t) if self.nodes.urban else True
        pl = path_loss_db(d, self.p.fc_ghz, los, self.p.h_tx_m, self.p.h_rx_m, self.p.nlos_excess_db)
        if self.p.shadowing_sigma_db > 0 and self._shadow_rng is not None:
            pl = pl + self._shadow_rng.normal(0.0, self.p.shadowing_sigma_db, size=pl.shape)
        out = power_dbm - pl
        out[tx] = -np.inf
        return out

    def _coupling_pair(self, rec: TxRecord, rx_span: Span, rx_channel: ChannelDef) -> tuple[float, float]:
        a, b = rec.span, rec.channel
        key = (a.low, a.high, b.center_mhz, b.bandwidth_mhz, rx_span.low, rx_span.high,
               rx_channel.center_mhz, rx_channel.bandwidth_mhz)
        c = self._coupling.get(key)
        if c is None:
            db = coupling_db(rec.span, rec.channel, rx_span, rx_channel, self.p.acir)
            c = self._coupling[key] = (db, 0.0 if math.isinf(db) else 10 ** (db / 10))
        return c

    def coupling(self, rec: TxRecord, rx_span: Span, rx_channel: ChannelDef) -> float:
        """Coupling loss in dB (-inf when nothing reaches the receiver span)."""
        return self._coupling_pair(rec, rx_span, rx_channel)[0]

    def coupling_lin(self, rec: TxRecord, rx_span: Span, rx_channel: ChannelDef) -> float:
        return self._coupling_pair(rec, rx_span, rx_channel)[1]

    def received_mw(self, rec: TxRecord, nodes, rx_span: Span, rx_channel: ChannelDef):
        """Received power in mW at `nodes` within the receiver span."""
        return rec.base_mw[nodes] * self.coupling_lin(rec, rx_span, rx_channel)

    def rx_dbm(self, rec: TxRecord, rx_span: Span, rx_channel: ChannelDef, nodes=None) -> np.ndarray:
        c = self.coupling(rec, rx_span, rx_channel)
        base = rec.base_dbm if nodes is None else rec.base_dbm[nodes]
        return base + c

    def rx_mw(self, rec: TxRecord, rx_span: Span, rx_channel: ChannelDef, nodes=None) -> np.ndarray:
        c = self.coupling_lin(rec, rx_span, rx_channel)
        base = rec.base_mw if rec.base_mw is not None else dbm_to_mw(rec.base_dbm)
        return base * c if nodes is None else base[nodes] * c

    # -- lifecycle ---------------------------------------------------------
    def begin(self, rec: TxRecord) -> TxRecord:
        if rec.base_dbm is None:
            rec.base_dbm = self.base_power(rec.tx, rec.power_dbm, rec.start)
        if rec.base_mw is None:
            rec.base_mw = dbm_to_mw(rec.base_dbm)
        for other in self.active:
            other.overlaps.append(rec)
            rec.overlaps.append(other)
        self.active.append(rec)
        if self.log is not None:
            self.log.append((rec.start, rec.end, rec.rat, rec.tx, rec.rid))
        now = self.engine.now
        for g in self.groups:
            c = self.coupling_lin(rec, g.span, g.channel)
            if not c:
                continue
            g.sensed += rec.base_mw[g.nodes] * c
            self._refresh(g, now)
        for obs in self.observers:
            obs(rec)
        return rec

    def finish(self, rec: TxRecord) -> None:
        self.active.remove(rec)
        self.recent.append(rec)
        now = self.engine.now
        horizon = now - self.history_ns
        if self.recent and self.recent[0].end < horizon:
            self.recent = [r for r in self.recent if r.end >= horizon]
        for g in self.groups:
            c = self.coupling_lin(rec, g.span, g.channel)
            if not c:
                continue
            if not self.active:
                g.sensed[:] = 0.0
            else:
                g.sensed -= rec.base_mw[g.nodes] * c
                np.maximum(g.sensed, 0.0, out=g.sensed)
            self._refresh(g, now)

    def _refresh(self, g: CcaGroup, now: int) -> None:
        busy = g.sensed >= g.thr_mw
        changed = np.flatnonzero(busy != g.busy)
        if not len(changed):
            return
        became_busy = changed[busy[changed]]
        became_idle = changed[~busy[changed]]
        g.busy_since[became_busy] = now
        g.busy_ns[became_idle] += now - g.busy_since[became_idle]
        g.busy[changed] = busy[changed]
        if g.callback is not None:
            if len(became_busy):
                g.callback(became_busy, True, now)
            if len(became_idle):
                g.callback(became_idle, False, now)

    def add_group(self, group: CcaGroup) -> CcaGroup:
        for rec in self.active:
            c = self.coupling_lin(rec, group.span, group.channel)
            if c:
                group.sensed += rec.base_mw[group.nodes] * c
        group.busy = group.sensed >= group.thr_mw
        self.groups.append(group)
        return group

    # -- queries -----------------------------------------------------------
    def overlapping(self, t0: int, t1: int) -> list[TxRecord]:
        """Records (active or recently ended) intersecting [t0, t1)."""
        out = [r for r in self.recent if r.end > t0 and r.start < t1]
        out.extend(r for r in self.active if r.end > t0 and r.start < t1)
        return out

    def sensed_dbm(self, node: int, channel: ChannelDef, t: int, span: Span | None = None,
                   exclude: TxRecord | None = None) -> float:
        span = span or Span.of(channel)
        total = 0.0
        for r in self.active:
            if r is exclude or not (r.start <= t < r.end):
                continue
            total += float(self.rx_mw(r, span, channel, node))
        return 10 * math.log10(total) if total > 0 else -math.inf

    def cca_busy(self, node: int, channel: ChannelDef, threshold_dbm: float, t: int,
                 span: Span | None = None) -> bool:
        return self.sensed_dbm(node, channel, t, span) >= threshold_dbm - 1e-9

    def mean_interference_mw(self, wanted: TxRecord, rx_nodes, rx_span: Span, rx_channel: ChannelDef,
                             t0: int | None = None, t1: int | None = None,
                             exclude: tuple = ()) -> np.ndarray:
        """Interference energy from records overlapping `wanted`, averaged over [t0, t1)."""
        t0 = wanted.start if t0 is None else t0
        t1 = wanted.end if t1 is None else t1
        rx_nodes = np.atleast_1d(rx_nodes)
        acc = np.zeros(len(rx_nodes))
        dur = float(t1 - t0)
        for r in wanted.overlaps:
            if r in exclude:
                continue
            ov = min(r.end, t1) - max(r.start, t0)
            if ov <= 0:
                continue
            c = self.coupling_lin(r, rx_span, rx_channel)
            if not c:
                continue
            acc += r.base_mw[rx_nodes] * (c * ov / dur)
        return acc

    def frame_sinr_db(self, wanted: TxRecord, rx_nodes, rx_span: Span, rx_channel: ChannelDef,
                      noise_mw: float, cap_db: float | None = None) -> np.ndarray:
        """One SINR per receiver for the whole frame, per the configured averaging.

        `cap_db` is the SINR above which the decoder gains nothing (the
        error-free point of its PER curve); only the "capped" mode uses it.
        """
        rx_nodes = np.atleast_1d(rx_nodes)
        s_dbm = wanted.base_dbm[rx_nodes]
        if self.p.sinr_averaging == "energy" or not wanted.overlaps:
            i = self.mean_interference_mw(wanted, rx_nodes, rx_span, rx_channel)
            return s_dbm - 10 * np.log10(noise_mw + i)
        t0, t1 = wanted.start, wanted.end
        cuts = {t0, t1}
        terms = []
        for r in wanted.overlaps:
            a, b = max(r.start, t0), min(r.end, t1)
            if b <= a:
                continue
            c = self.coupling_lin(r, rx_span, rx_channel)
            if not c:
                continue
            cuts.update((a, b))
            terms.append((a, b, r.base_mw[rx_nodes] * c))
        edges = sorted(cuts)
        if len(edges) == 2:
            i = sum((t[2] for t in terms), np.zeros(len(rx_nodes)))
            return s_dbm - 10 * np.log10(noise_mw + i)
        s_mw = wanted.base_mw[rx_nodes]
        clip = np.inf
        if self.p.sinr_averaging == "capped" and cap_db is not None:
            clip = 10 ** (cap_db / 10)
        cap = np.zeros(len(rx_nodes))
        for a, b in zip(edges, edges[1:]):
            i = np.zeros(len(rx_nodes))
            for ra, rb, mw in terms:
                if ra <= a and rb >= b:
                    i += mw
            cap += (b - a) * np.log2(1.0 + np.minimum(s_mw / (noise_mw + i), clip))
        cap /= float(t1 - t0)
        with np.errstate(divide="ignore"):
            return 10 * np.log10(np.exp2(cap) - 1.0)

    def sinr_at(self, rx: int, wanted: TxRecord, t: int | None = None,
                span: Span | None = None) -> float:
        """Instantaneous SINR (dB) at rx for `wanted`; -inf if rx is transmitting."""
        t = wanted.start if t is None else t
        span = span or wanted.span
        for r in self.active + self.recent:
            if r.tx == rx and r.start <= t < r.end:
                return -math.inf
        s = float(self.rx_mw(wanted, span, wanted.channel, rx))
        i = 0.0
        for r in self.active + self.recent:
            if r is wanted or not (r.start <= t < r.end):
                continue
            i += float(self.rx_mw(r, span, wanted.channel, rx))
        n = self.noise_mw(span.width)
        return 10 * math.log10(s / (n + i)) if s > 0 else -math.inf
