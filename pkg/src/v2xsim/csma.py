"""Broadcast CSMA network of 802.11p and 802.11bd nodes on one ITS channel."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics as M
from .core import MS, Engine, RngFactory
from .dsrc import CsmaStation, DropHeadQueue, EdcaParams, Phase
from .medium import CcaGroup, Medium, TxRecord
from .ngv import (CapabilityMode, CapabilityState, CombiningGainTable, FrameDescriptor, FrameFormat,
                  NgvParams, RetxMode, RxClass, build_frame, retransmission_count)
from .radio import ChannelDef, PerTable, Span, dbm_to_mw
from .traffic import Packet, PacketFactory, TrafficProfile


@dataclass
class CsmaConfig:
    edca: EdcaParams = field(default_factory=EdcaParams)
    cca_dbm: float = -85.0
    queue_depth: int = 2
    power_dbm: float = 23.0
    mcs: str = "QPSK-1/2"
    preamble_sinr_db: float = 2.0
    # 802.11bd behaviour
    ngv: NgvParams = field(default_factory=NgvParams)
    gains: CombiningGainTable = field(default_factory=CombiningGainTable)
    mcs_ngv: str = "QPSK-1/2"
    legacy_format: FrameFormat = FrameFormat.LEGACY_11P
    native_format: FrameFormat = FrameFormat.NGV_ONLY
    retransmissions: bool = True
    retx_mode: RetxMode = RetxMode.BURST
    fixed_k: int | None = None
    dcm: bool = False
    cbr_window_ns: int = 100 * MS
    p11_copy_gain: bool = False    # apply the table gain at 11p receivers instead of per-copy decisions


@dataclass
class _PacketRx:
    rx: np.ndarray
    dist: np.ndarray
    classes: np.ndarray                # True for 11bd receivers
    k_total: int
    best_sinr: np.ndarray
    best_free: np.ndarray
    success: np.ndarray
    reason: np.ndarray
    frame: FrameDescriptor | None = None
    copies: int = 0


@dataclass
class _PidOnly:
    id: int


class _Node:
    def __init__(self, station: CsmaStation, rx_class: RxClass, depth: int, saturated: bool):
        self.station = station
        self.rx_class = rx_class
        self.queue = DropHeadQueue(depth)
        self.saturated = saturated
        self.capability = CapabilityState()
        self.cbr_mark = (0, 0)
        self.cbr_last = 0.0


class CsmaNetwork:
    def __init__(self, engine: Engine, medium: Medium, rngs: RngFactory, channel: ChannelDef,
                 cfg: CsmaConfig, per: PerTable, results: M.ResultSet, factory: PacketFactory,
                 probes: dict[str, int] | None = None, record_all: bool = True):
        self.engine = engine
        self.medium = medium
        self.rngs = rngs
        self.channel = channel
        self.span = Span.of(channel)
        self.cfg = cfg
        self.per = per
        self.results = results
        self.factory = factory
        self.probes = dict(probes or {})
        self.probe_of = {v: k for k, v in self.probes.items()}
        self.record_all = record_all
        self.nodes: dict[int, _Node] = {}
        self.profiles: dict[int, TrafficProfile] = {}
        n = len(medium.nodes)
        self.is_probe = np.zeros(n, dtype=bool)
        self.is_probe[list(self.probe_of)] = True
        self.lock_end = np.zeros(n, dtype=np.int64)
        self.tx_start = np.full(n, -1, dtype=np.int64)
        self.tx_end = np.full(n, -1, dtype=np.int64)
        self.rx_class = np.zeros(n, dtype=bool)
        self.pending: dict[int, _PacketRx] = {}
        self.group: CcaGroup | None = None
        self.noise_mw = medium.noise_mw(channel.bandwidth_mhz)
        self.rx_rng = rngs.stream(-1, "csma-rx")
        self.max_range = results.max_range_m
        self.access_log: list[tuple[int, int, int]] = []

    # -- setup ---------------------------------------------------------------
    def add_node(self, node: int, rx_class: RxClass | str, profile: TrafficProfile) -> None:
        rx_class = RxClass(rx_class)
        st = CsmaStation(self.engine, node, self.cfg.edca, self.rngs.stream(node, "backoff"), self._on_access)
        self.nodes[node] = _Node(st, rx_class, self.cfg.queue_depth, profile.kind == "saturated")
        self.profiles[node] = profile
        self.rx_class[node] = rx_class is RxClass.BD11

    def add_probe(self, name: str, node: int, rx_class: RxClass | str = RxClass.P11) -> None:
        self.probes[name] = node
        self.probe_of[node] = name
        self.is_probe[node] = True
        self.rx_class[node] = RxClass(rx_class) is RxClass.BD11

    def start(self) -> None:
        ids = np.array(sorted(self.nodes), dtype=int)
        self.group = self.medium.add_group(CcaGroup(ids, self.cfg.cca_dbm, self.channel, self._cca))
        self.medium.observers.append(self._observe)
        self.rx_nodes = np.array(sorted(set(ids) | set(self.probes.values())), dtype=int)
        for node in ids:
            st = self.nodes[node].station
            st.busy = bool(self.group.busy[self.group.pos[node]])
            if self.nodes[node].saturated:
                st.request()

    def _cca(self, idx: np.ndarray, busy: bool, t: int) -> None:
        nodes = self.group.nodes[idx]
        for n in nodes:
            st = self.nodes[int(n)].station
            if busy:
                st.medium_busy(t)
            else:
                st.medium_idle(t)

    # -- traffic -------------------------------------------------------------
    def on_packet(self, pkt: Packet) -> None:
        nd = self.nodes[pkt.origin]
        evicted = nd.queue.push((pkt, 1, 0, None))
        if evicted is not None:
            if evicted[1] > 1:      # a pending extra copy: the packet was already on air
                self._finalize(evicted[0], self.pending[evicted[0].id])
            else:
                self._drop(evicted[0], M.QUEUE_DROP)
        nd.station.request()

    def _drop(self, pkt: Packet, code: int) -> None:
        rx, dist = self._in_range(pkt.origin, self.engine.now)
        self._open(len(rx) if self.record_all else int(self.is_probe[rx].sum()))
        self._record(rx, dist, np.full(len(rx), code))
        self.results.bump("queue_drop" if code == M.QUEUE_DROP else "deadline_miss")

    def _in_range(self, tx: int, t: int) -> tuple[np.ndarray, np.ndarray]:
        cand = self.rx_nodes[self.rx_nodes != tx]
        d = self.medium.nodes.distances_from(tx, t)[cand]
        keep = d < self.max_range
        return cand[keep], d[keep]

    def _open(self, n: int) -> None:
        self.results.bump("opportunities", n)

    def _record(self, rx: np.ndarray, dist: np.ndarray, outcome: np.ndarray) -> None:
        res = self.results
        if self.record_all:
            res.record(dist, outcome)
        if not self.probe_of:
            return
        for k in np.flatnonzero(self.is_probe[rx]):
            name = self.probe_of[int(rx[k])]
            if not self.record_all:
                res.record(dist[k], outcome[k])
            res.record_probe(name, dist[k:k + 1], outcome[k:k + 1])

    # -- access --------------------------------------------------------------
    def cbr(self, node: int) -> float:
        nd = self.nodes[node]
        now = self.engine.now
        t0, b0 = nd.cbr_mark
        if now - t0 >= self.cfg.cbr_window_ns:
            b = self.group.busy_time(self.group.pos[node], now)
            nd.cbr_last = min(1.0, max(0.0, (b - b0) / (now - t0)))
            nd.cbr_mark = (now, b)
        return nd.cbr_last

    def _choose_frame(self, node: int, pkt: Packet) -> tuple[FrameDescriptor, int]:
        nd = self.nodes[node]
        c = self.cfg
        if nd.rx_class is RxClass.P11:
            return build_frame(pkt.size, FrameFormat.LEGACY_11P, c.mcs, ngv_origin=False), 1
        mode = nd.capability.mode(self.engine.now)
        fmt = c.legacy_format if mode is CapabilityMode.LEGACY_COMPATIBLE else c.native_format
        frame = build_frame(pkt.size, fmt, c.mcs, c.mcs_ngv, c.ngv, capability=mode, dcm=c.dcm)
        if c.fixed_k is not None:
            k = c.fixed_k
        elif c.retransmissions:
            k = retransmission_count(self.cbr(node), c.ngv.cbr_thresholds)
        else:
            k = 1
        return frame, k

    def _on_access(self, st: CsmaStation) -> None:
        nd = self.nodes[st.node]
        now = self.engine.now
        if nd.saturated:
            pkt = self.factory.make(st.node, now, self.profiles[st.node].size_bytes, self.profiles[st.node])
            copy, k, frame = 1, 0, None
        elif len(nd.queue):
            pkt, copy, k, frame = nd.queue.pop()
        else:
            st.done()
            return
        if frame is None:
            frame, k = self._choose_frame(st.node, pkt)
            self.results.access_latency_ms.append((now - pkt.gen_time) / MS)
            self.results.bump("packets_sent")
        self.access_log.append((now, st.node, int(nd.rx_class is RxClass.BD11)))
        self._transmit(st, pkt, frame, copy, k)

    def _transmit(self, st: CsmaStation, pkt: Packet, frame: FrameDescriptor, copy: int, k: int) -> None:
        now = self.engine.now
        rec = TxRecord(self.medium.new_id(), st.node, self.nodes[st.node].rx_class.value, self.channel,
                       self.span, self.cfg.power_dbm, now, now + frame.duration, frame)
        rec.meta.update(pkt=pkt, copy=copy, k=k)
        self.tx_start[st.node] = now
        self.tx_end[st.node] = rec.end
        self.results.bump("transmissions")
        self.medium.begin(rec)
        self.engine.schedule(rec.end, self._tx_end, st, rec, target=st.node, kind="tx-end")

    def _tx_end(self, st: CsmaStation, rec: TxRecord) -> None:
        self.medium.finish(rec)
        self._finish_rx(rec)
        pkt, copy, k = rec.meta["pkt"], rec.meta["copy"], rec.meta["k"]
        nd = self.nodes[st.node]
        if copy < k and self.cfg.retx_mode is RetxMode.BURST:
            self.engine.schedule(self.engine.now + self.cfg.edca.sifs_ns, self._transmit, st, pkt,
                                 rec.frame, copy + 1, k, target=st.node, kind="tx-burst")
            return
        if copy < k:
            nd.queue.push_front((pkt, copy + 1, k, rec.frame))
        st.done(more=nd.saturated or len(nd.queue) > 0)

    # -- reception -----------------------------------------------------------
    def _observe(self, rec: TxRecord) -> None:
        if rec.rat not in ("11p", "11bd") or rec.channel != self.channel or rec.tx not in self.nodes:
            return
        now = rec.start
        pkt = rec.meta["pkt"]
        st = self.pending.get(pkt.id)
        if st is None:
            rx, dist = self._in_range(rec.tx, now)
            n = len(rx)
            st = _PacketRx(rx, dist, self.rx_class[rx], rec.meta["k"],
                           np.full(n, -np.inf), np.full(n, -np.inf), np.zeros(n, dtype=bool),
                           np.full(n, -1, dtype=np.int64), rec.frame)
            self.pending[pkt.id] = st
            countable = st.classes if rec.frame.decodable_mcs(RxClass.P11) is None else np.ones(n, bool)
            self._open(int(countable.sum()) if self.record_all
                       else int((countable & self.is_probe[rx]).sum()))
        rx = st.rx
        s_mw = dbm_to_mw(rec.base_dbm[rx])
        i_mw = np.zeros(len(rx))
        for r in self.medium.active:
            if r is not rec:
                i_mw += self.medium.rx_mw(r, self.span, self.channel, rx)
        sinr0 = 10 * np.log10(s_mw / (self.noise_mw + i_mw))
        snr0 = 10 * np.log10(s_mw / self.noise_mw)
        transmitting = self.tx_end[rx] > now
        receiving = self.lock_end[rx] > now
        thr = self.cfg.preamble_sinr_db
        lock = ~transmitting & ~receiving & (sinr0 >= thr)
        reason = np.where(transmitting, M.HALF_DUPLEX,
                          np.where(receiving | (snr0 >= thr), M.COLLISION, M.SINR_FAIL))
        self.lock_end[rx[lock]] = rec.end
        rec.meta["rx_lock"] = lock
        rec.meta["rx_reason"] = reason

    def _finish_rx(self, rec: TxRecord) -> None:
        pkt = rec.meta["pkt"]
        st = self.pending[pkt.id]
        rx, lock, reason = st.rx, rec.meta["rx_lock"], rec.meta["rx_reason"].copy()
        # a receiver that started its own frame during this one cannot have decoded it
        hd = lock & (self.tx_start[rx] >= rec.start) & (self.tx_start[rx] < rec.end)
        lock = lock & ~hd
        reason[hd] = M.HALF_DUPLEX
        s_dbm = rec.base_dbm[rx]
        frame: FrameDescriptor = rec.frame
        p_mcs = frame.decodable_mcs(RxClass.P11)
        bd_cap = self.per.get("11bd", frame.decodable_mcs(RxClass.BD11)).error_free_db
        p_cap = self.per.get("11p", p_mcs).error_free_db if p_mcs is not None else bd_cap
        raw = self.medium.frame_sinr_db(rec, rx, self.span, self.channel, self.noise_mw, p_cap)
        sinr = np.where(lock, raw, -np.inf)
        if bd_cap == p_cap or self.medium.p.sinr_averaging != "capped":
            sinr_bd = sinr
        else:
            raw = self.medium.frame_sinr_db(rec, rx, self.span, self.channel, self.noise_mw, bd_cap)
            sinr_bd = np.where(lock, raw, -np.inf)
        free = np.where(lock, s_dbm - 10 * np.log10(self.noise_mw), -np.inf)
        is_bd = st.classes
        k = st.k_total
        st.copies += 1
        first = st.copies == 1
        if first:
            st.reason[:] = reason
        # 11p receivers: each copy is an independent frame
        p_idx = np.flatnonzero(~is_bd & lock & ~st.success)
        if p_mcs is not None and len(p_idx):
            curve = self.per.get("11p", p_mcs)
            g = self.cfg.gains.gain_db(frame, k, RxClass.P11) if self.cfg.p11_copy_gain else 0.0
            u = self.rx_rng.random(len(p_idx))
            ok = u >= curve(sinr[p_idx] + g)
            st.success[p_idx[ok]] = True
            bad = p_idx[~ok]
            if first:
                coll = u[~ok] >= curve(free[p_idx[~ok]] + g)
                st.reason[bad] = np.where(coll, M.COLLISION, M.SINR_FAIL)
        # 11bd receivers keep the best copy and decide once at the end
        better = is_bd & (sinr_bd > st.best_sinr)
        st.best_sinr[better] = sinr_bd[better]
        st.best_free[better] = free[better]
        # capability: 11bd nodes that decode a legacy-origin frame see a legacy neighbour
        if not frame.ngv_marked and p_mcs is not None:
            bd_idx = np.flatnonzero(is_bd & lock)
            if len(bd_idx):
                curve = self.per.get("11bd", p_mcs)
                heard = bd_idx[self.rx_rng.random(len(bd_idx)) >= curve(sinr[bd_idx])]
                for n in rx[heard]:
                    nd = self.nodes.get(int(n))
                    if nd is not None:
                        nd.capability.update(frame, self.engine.now)
        if st.copies >= k:
            self._finalize(pkt, st)

    def _finalize(self, pkt: Packet, st: _PacketRx) -> None:
        del self.pending[pkt.id]
        frame = st.frame
        bd = np.flatnonzero(st.classes)
        mcs = frame.decodable_mcs(RxClass.BD11)
        if len(bd):
            curve = self.per.get("11bd", mcs)
            g = self.cfg.gains.gain_db(frame, st.k_total, RxClass.BD11)
            u = self.rx_rng.random(len(bd))
            s = st.best_sinr[bd]
            ok = np.isfinite(s) & (u >= curve(s + g))
            st.success[bd[ok]] = True
            fail = bd[~ok & np.isfinite(s)]
            coll = u[~ok & np.isfinite(s)] >= curve(st.best_free[fail] + g)
            st.reason[fail] = np.where(coll, M.COLLISION, M.SINR_FAIL)
        # legacy receivers cannot decode a frame with no legacy payload: not an opportunity
        countable = np.ones(len(st.rx), dtype=bool)
        if frame.decodable_mcs(RxClass.P11) is None:
            countable &= st.classes
        outcome = np.where(st.success, M.SUCCESS, st.reason)
        self._record(st.rx[countable], st.dist[countable], outcome[countable])

    def flush(self) -> None:
        """Close packets still on air at the end of the run."""
        for pid in sorted(self.pending):
            st = self.pending[pid]
            self._finalize(_PidOnly(pid), st)

    # -- reporting -------------------------------------------------------------
    def access_counts(self) -> dict[int, int]:
        return {n: nd.station.accesses for n, nd in self.nodes.items()}

    def cbr_snapshot(self) -> float:
        if self.group is None or not len(self.group.nodes):
            return 0.0
        now = self.engine.now
        return float(np.mean([self.group.busy_time(k, now) for k in range(len(self.group.nodes))]) / max(now, 1))
