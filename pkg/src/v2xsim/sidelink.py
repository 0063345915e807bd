"""Slot-synchronous sidelink system shared by C-V2X mode 4 and NR mode 2.

One tick per slot drives everything: at the boundary of slot n the system
closes the transmissions that ended, records what every UE sensed in slot
n-1, decodes control and data, resolves feedback and pre-emption
indications, and puts the transmissions planned for slot n on air.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics as M
from .core import MS, S, ConfigError, Engine, RngFactory
from .cv2x import (OversizeError, ResourceGrid, SciRecord, SelectionParams, SensingDb, SpsState,
                   _footprint_reduce, _projected_sci, draw_counter, select_resource, window_slots)
from .medium import Medium, TxRecord
from .nrv2x import DualRatPolicy, HarqParams, Radio, choose_victim, mode2d_schedule
from .radio import ChannelDef, PerTable, Span, dbm_to_mw
from .traffic import CommType, Packet, TrafficProfile

log = logging.getLogger(__name__)


@dataclass
class PreemptionParams:
    enabled: bool = False
    urgent_priority: int = 5          # packets at or above this use strict selection
    pool: str = "dedicated"           # dedicated | shared
    pi_mcs: str = "BPSK-1/2"

    def __post_init__(self):
        if self.pool not in ("dedicated", "shared"):
            raise ConfigError("preemption.pool must be 'dedicated' or 'shared'")


@dataclass
class Mode2dParams:
    groups: tuple[tuple[int, ...], ...] = ()     # first member of each group is its S-UE
    pool_subch: tuple[int, ...] = (0,)
    period_slots: int = 20
    disjoint_pools: bool = True

    def __post_init__(self):
        if self.period_slots < 1:
            raise ConfigError("mode2d.period_slots must be >= 1")
        seen: set[int] = set()
        for g in self.groups:
            if not g:
                raise ConfigError("mode2d group must list at least its S-UE")
            if seen & set(g):
                raise ConfigError("a UE belongs to at most one mode 2(d) group")
            seen |= set(g)


@dataclass
class SidelinkConfig:
    rat: str = "cv2x"
    grid: ResourceGrid = field(default_factory=ResourceGrid)
    sel: SelectionParams = field(default_factory=SelectionParams)
    power_dbm: float = 23.0
    mcs: str = "QPSK-1/2"
    sci_mcs: str = "BPSK-1/2"
    sensing_window_ms: float = 1000.0
    rri_ms: float = 100.0
    rri_set_ms: tuple[float, ...] = ()
    counter_range: tuple[int, int] = (5, 15)
    keep_probability: float = 0.0
    selection: str = "sensing"        # sensing | random
    blind_retx: bool = False
    max_slots: int = 1
    access: str = "long"              # long | short | combined
    lbt_threshold_dbm: float = -85.0
    lbt_gap_symbols: int = 2
    collision_range_m: float = 300.0
    cbr_threshold_dbm: float = -94.0
    cbr_every_slots: int = 100
    harq: HarqParams | None = None
    preemption: PreemptionParams = field(default_factory=PreemptionParams)
    mode2d: Mode2dParams | None = None
    warmup_ns: int = 0

    def __post_init__(self):
        if self.selection not in ("sensing", "random"):
            raise ConfigError("selection must be 'sensing' or 'random'")
        if self.access not in ("long", "short", "combined"):
            raise ConfigError("access must be 'long', 'short' or 'combined'")
        lo, hi = self.counter_range
        if not 1 <= lo <= hi:
            raise ConfigError("counter_range must satisfy 1 <= lo <= hi")
        if not 0 <= self.lbt_gap_symbols <= 13:
            raise ConfigError("lbt_gap_symbols must lie in [0, 13]")
        if self.rri_ms <= 0 or self.sensing_window_ms <= 0:
            raise ConfigError("rri_ms and sensing_window_ms must be positive")
        if self.max_slots < 1:
            raise ConfigError("max_slots must be >= 1")


@dataclass(eq=False)
class Plan:
    """A transmission planned for a future slot."""
    k: int
    pkt: Packet | None
    slot: int
    subch: int
    n_slots: int = 1
    n_subch: int = 1
    copy: int = 1
    kind: str = "dyn"                 # sps | dyn | 2d | harq | pre | pi
    lbt: bool = False
    candidates: list | None = None
    group: int = -1
    cancelled: bool = False
    pi_conflict: bool = False


@dataclass(eq=False)
class _Tx:
    pkt: Packet
    rx: np.ndarray
    pos: np.ndarray
    dist: np.ndarray
    counted: bool
    success: np.ndarray
    reason: np.ndarray
    best: np.ndarray
    k_total: int = 1
    copies: int = 0
    tx_count: int = 0
    harq: bool = False
    feedback: dict = field(default_factory=dict)
    awaiting: int = 0


class _Ue:
    def __init__(self, k: int, node: int, profile: TrafficProfile, rng: np.random.Generator):
        self.k = k
        self.node = node
        self.profile = profile
        self.rng = rng
        self.sps = SpsState()
        self.queued: Packet | None = None
        self.plans: list[Plan] = []
        self.pinned: tuple[int, int] | None = None
        self.skip: set[int] = set()
        self.group = -1
        self.granted = False
        self.announced: tuple[int, int] | None = None


class SidelinkSystem:
    def __init__(self, engine: Engine, medium: Medium, rngs: RngFactory, channel: ChannelDef,
                 cfg: SidelinkConfig, per: PerTable, results: M.ResultSet,
                 probes: dict[str, int] | None = None, record_all: bool = True,
                 gate: DualRatPolicy | None = None, radio: Radio | str | None = None,
                 dual_nodes=()):
        self.engine = engine
        self.medium = medium
        self.rngs = rngs
        self.channel = channel
        self.cfg = cfg
        self.per = per
        self.results = results
        self.probes = dict(probes or {})
        self.probe_of = {v: k for k, v in self.probes.items()}
        self.is_probe = np.zeros(len(medium.nodes), dtype=bool)
        self.is_probe[list(self.probe_of)] = True
        self.record_all = record_all
        self.gate = gate
        self.radio = Radio(radio) if radio is not None else (Radio.NRV2X if cfg.rat == "nr" else Radio.CV2X)
        self.dual = set(int(n) for n in dual_nodes)
        self.grid = cfg.grid
        self.slot_ns = cfg.grid.slot_ns
        self.S = cfg.grid.n_subch
        self.W = max(1, int(round(cfg.sensing_window_ms * MS / self.slot_ns)))
        self.rri_slots = self._to_slots(cfg.rri_ms)
        rri_set = tuple(sorted({self._to_slots(x) for x in (cfg.rri_set_ms or (cfg.rri_ms,))}))
        self.sel = dataclasses.replace(cfg.sel, rri_set=rri_set, rssi_period_slots=self.rri_slots,
                                       rssi_periods=max(1, self.W // self.rri_slots))
        self.t1 = cfg.sel.t1_slots
        self.sub_spans = [Span(*self.grid.subch_span_mhz(channel.low_mhz, channel.bandwidth_mhz, c, 1))
                          for c in range(self.S)]
        self.sub_noise_mw = self.medium.noise_mw(self.sub_spans[0].width)
        self.gap_ns = (cfg.lbt_gap_symbols * self.slot_ns) // 14
        self.ues: list[_Ue] = []
        self.k_of: dict[int, int] = {}
        self.plans: dict[int, list[Plan]] = {}
        self.inflight: list[TxRecord] = []
        self.began: dict[int, list[TxRecord]] = {}
        self.txs: dict[int, _Tx] = {}
        self.psfch: dict[int, list] = {}
        self.pis: dict[int, list] = {}
        self.cur_slot = 0
        self.rx_rng = rngs.stream(-1, f"{cfg.rat}-rx")
        self.max_range = results.max_range_m
        self.db: SensingDb | None = None
        self.tx_log: list[tuple[int, int, int, int, int]] = []     # (slot, node, subch, n_subch, group)
        self._mw_key = f"mw-{id(self)}"
        self._started = False

    def _to_slots(self, ms_value: float) -> int:
        return max(1, int(round(ms_value * MS / self.slot_ns)))

    # -- setup ---------------------------------------------------------------
    def add_ue(self, node: int, profile: TrafficProfile, pinned: tuple[int, int] | None = None) -> None:
        if self._started:
            raise ConfigError("UEs must be added before start()")
        k = len(self.ues)
        u = _Ue(k, int(node), profile, self.rngs.stream(node, f"{self.cfg.rat}-sel"))
        if pinned is not None:
            off, c = pinned
            if not 0 <= c < self.S:
                raise ConfigError(f"pinned subchannel {c} outside the grid")
            u.pinned = (int(off) % self.rri_slots, int(c))
        self.ues.append(u)
        self.k_of[int(node)] = k

    def add_probe(self, name: str, node: int) -> None:
        self.probes[name] = int(node)
        self.probe_of[int(node)] = name
        self.is_probe[int(node)] = True

    def start(self) -> None:
        self._started = True
        nodes = np.array([u.node for u in self.ues], dtype=int)
        self.ue_nodes = nodes
        self.rx_nodes = np.array(sorted(set(nodes.tolist()) | set(self.probes.values())), dtype=int)
        self.rx_ue_pos = np.searchsorted(self.rx_nodes, nodes)
        self.db = SensingDb(len(self.ues), self.W, self.S)
        self.pool_mask = np.ones(self.S, dtype=bool)
        d = self.cfg.mode2d
        if d is not None:
            for c in d.pool_subch:
                if not 0 <= c < self.S:
                    raise ConfigError(f"mode2d pool subchannel {c} outside the grid")
            for gi, members in enumerate(d.groups):
                for m in members:
                    if m not in self.k_of:
                        raise ConfigError(f"mode2d member {m} is not a sidelink UE")
                    self.ues[self.k_of[m]].group = gi
            if d.disjoint_pools:
                self.pool_mask[list(d.pool_subch)] = False
        first = -(-self.engine.now // self.slot_ns)
        self.cur_slot = first
        self.engine.schedule(first * self.slot_ns, self._tick, first, kind="sl-tick")

    # -- packets -------------------------------------------------------------
    def counted(self, pkt: Packet) -> bool:
        return pkt.gen_time >= self.cfg.warmup_ns

    def on_packet(self, pkt: Packet) -> None:
        u = self.ues[self.k_of[pkt.origin]]
        old = u.queued
        u.queued = pkt
        if old is not None:
            swapped = False
            for p in u.plans:
                if p.pkt is old and not p.cancelled:
                    p.pkt = pkt
                    swapped = True
            self._drop(old, M.QUEUE_DROP)
            if swapped:
                return
        if u.group >= 0:
            u.granted = False
            return                        # waits for its S-UE's next schedule
        self._schedule_packet(u, pkt)

    def _footprint(self, pkt: Packet) -> tuple[int, int] | None:
        try:
            return self.grid.footprint(pkt.size, self.cfg.mcs, self.cfg.max_slots)
        except OversizeError:
            return None

    def _t2(self, pkt: Packet, ls: int, now_slot: int) -> int:
        return pkt.deadline // self.slot_ns - ls - now_slot

    def _allowed(self, u: _Ue, slots: np.ndarray, ls: int, exclude=()) -> np.ndarray:
        mask = np.broadcast_to(self.pool_mask, (len(slots), self.S)).copy() if u.group < 0 \
            else np.ones((len(slots), self.S), dtype=bool)
        if self.gate is not None and u.node in self.dual:
            ok = self.gate.permits(self.radio, slots * self.slot_ns, (slots + ls) * self.slot_ns)
            mask &= ok[:, None]
        for slot, c in exclude:
            i = slot - (slots[0] if len(slots) else 0)
            if 0 <= i < len(slots):
                mask[i, c] = False
        return mask

    def _schedule_packet(self, u: _Ue, pkt: Packet, exclude=(), copy: int = 1, kind: str | None = None) -> bool:
        """Plan the transmissions of `pkt`. Returns False when it was dropped."""
        fp = self._footprint(pkt)
        if fp is None:
            self.results.bump("oversize")
            self._lose(u, pkt, copy)
            return False
        ls, lc = fp
        now_slot = self.cur_slot
        t2 = self._t2(pkt, ls, now_slot)
        if t2 < self.t1:
            self._lose(u, pkt, copy)
            return False
        slots = window_slots(now_slot, self.t1, t2)
        allowed = self._allowed(u, slots, ls, exclude)
        urgent = pkt.priority >= self.cfg.preemption.urgent_priority
        harq = kind == "harq"
        c = self.cfg

        if c.access == "short" or (c.access == "combined" and not self.db.warm(u.k, now_slot)):
            return self._plan_lbt(u, pkt, slots, allowed, ls, lc, copy, kind or "dyn")

        if u.profile.kind == "periodic" and not urgent and not harq and copy == 1:
            s = self._sps_next(u, now_slot)
            if s is not None and s <= now_slot + t2:
                sub = u.pinned[1] if u.pinned else u.sps.subch
                self._add(Plan(u.k, pkt, s, sub, u.sps.n_slots if u.sps.active else ls,
                               u.sps.n_subch if u.sps.active else lc, kind="sps", lbt=c.access != "long"))
                self._plan_blind(u, pkt, s, slots, allowed, ls, lc)
                return True

        sel = self._select(u, now_slot, t2, ls, lc, allowed, strict=urgent)
        if sel is None:
            if urgent and c.preemption.enabled and self._preempt(u, pkt, now_slot, slots, allowed):
                return True
            self._lose(u, pkt, copy)
            return False
        if u.profile.kind == "periodic" and not harq and copy == 1 and not urgent:
            if u.pinned is None:
                lo, hi = c.counter_range
                u.sps = SpsState(sel.slot, sel.subch, lc, ls, draw_counter(u.rng, lo, hi), c.keep_probability)
                u.announced = None
                self.results.bump("reselections")
            pkind = "sps" if u.pinned is None else "dyn"
        else:
            pkind = kind or "dyn"
        cands = None
        if c.access == "combined" and len(sel.candidates):
            order = np.lexsort((sel.candidates[:, 1], sel.candidates[:, 0]))
            cands = [(int(a), int(b)) for a, b in sel.candidates[order] if (a, b) != (sel.slot, sel.subch)]
        self._add(Plan(u.k, pkt, sel.slot, sel.subch, ls, lc, copy=copy, kind=pkind,
                       lbt=c.access != "long", candidates=cands))
        if copy == 1 and not harq and not exclude:
            self._plan_blind(u, pkt, sel.slot, slots, allowed, ls, lc)
        return True

    def _select(self, u: _Ue, now_slot: int, t2: int, ls: int, lc: int, allowed: np.ndarray, strict: bool):
        if self.cfg.selection == "random":
            return random_resource(now_slot, self.t1, t2, self.S, u.rng, ls, lc, allowed)
        return select_resource(self.db, u.k, now_slot, t2, self.sel, u.rng, ls, lc, allowed, strict)

    def _plan_blind(self, u: _Ue, pkt: Packet, first_slot: int, slots: np.ndarray, allowed: np.ndarray,
                    ls: int, lc: int) -> None:
        if not self.cfg.blind_retx or pkt.comm_type is not CommType.BROADCAST and self._harq_on():
            return
        a2 = allowed.copy()
        lo = max(0, first_slot - int(slots[0]))
        a2[lo:max(lo, first_slot + ls - int(slots[0]))] = False   # never in a slot the first copy occupies
        now_slot = self.cur_slot
        t2 = int(slots[-1]) - now_slot
        sel = self._select(u, now_slot, t2, ls, lc, a2, strict=False)
        if sel is None:
            return
        self._add(Plan(u.k, pkt, sel.slot, sel.subch, ls, lc, copy=2, kind="dyn", lbt=self.cfg.access != "long"))

    def _plan_lbt(self, u: _Ue, pkt: Packet, slots: np.ndarray, allowed: np.ndarray, ls: int, lc: int,
                  copy: int, kind: str) -> bool:
        ok = ~_footprint_reduce(~allowed, ls, lc, "any")
        rows = np.flatnonzero(ok.any(axis=1))
        if not len(rows):
            self._lose(u, pkt, copy)
            return False
        r = rows[0]
        cs = np.flatnonzero(ok[r])
        c = int(cs[u.rng.integers(len(cs))])
        self._add(Plan(u.k, pkt, int(slots[r]), c, ls, lc, copy=copy, kind=kind, lbt=True))
        return True

    def _sps_next(self, u: _Ue, now_slot: int) -> int | None:
        if u.pinned is not None:
            off, _ = u.pinned
            s = now_slot + 1 + (off - now_slot - 1) % self.rri_slots
            while s in u.skip:
                s += self.rri_slots
            return s
        if not u.sps.active:
            return None
        s = u.sps.slot
        if s <= now_slot:
            s += ((now_slot - s) // self.rri_slots + 1) * self.rri_slots
            u.sps.slot = s
        return s

    def _add(self, p: Plan) -> None:
        self.plans.setdefault(p.slot, []).append(p)
        if p.pkt is not None:
            u = self.ues[p.k]
            if len(u.plans) > 8:
                u.plans = [q for q in u.plans if not q.cancelled and q.slot >= self.cur_slot]
            u.plans.append(p)

    # -- losses and bookkeeping ---------------------------------------------
    def _lose(self, u: _Ue, pkt: Packet, copy: int) -> None:
        """A planned copy could not be sent in time."""
        u.granted = False
        st = self.txs.get(pkt.id)
        if st is None:
            if u.queued is pkt:
                u.queued = None
            self._drop(pkt, M.DEADLINE_MISS)
            return
        if st.harq:
            self._close(st)
            return
        st.k_total = max(st.copies, st.k_total - 1)
        if st.copies >= st.k_total:
            self._finalize(st)

    def _drop(self, pkt: Packet, code: int) -> None:
        self.results.bump("queue_drop" if code == M.QUEUE_DROP else "deadline_miss")
        for p in self.ues[self.k_of[pkt.origin]].plans:
            if p.pkt is pkt:
                p.cancelled = True
        if not self.counted(pkt):
            return
        rx, dist = self._in_range(pkt, self.engine.now)
        self.results.bump("opportunities", self._n_counted(rx))
        self._record(rx, dist, np.full(len(rx), code))

    def _in_range(self, pkt: Packet, t: int) -> tuple[np.ndarray, np.ndarray]:
        if pkt.dest:
            cand = np.array(sorted(pkt.dest), dtype=int)
        elif self.record_all:
            cand = self.rx_nodes
        else:
            cand = np.array(sorted(self.probe_of), dtype=int)
        cand = cand[cand != pkt.origin]
        d = self.medium.nodes.distances_from(pkt.origin, t)[cand]
        keep = d < self.max_range
        return cand[keep], d[keep]

    def _n_counted(self, rx: np.ndarray) -> int:
        if self.record_all:
            return len(rx)
        return int(self.is_probe[rx].sum())

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

    def _finalize(self, st: _Tx) -> None:
        if self.txs.pop(st.pkt.id, None) is None:
            return
        for p in self.ues[self.k_of[st.pkt.origin]].plans:
            if p.pkt is st.pkt:
                p.cancelled = True
        if not st.counted:
            return
        reason = np.where(st.reason < 0, M.SINR_FAIL, st.reason)
        outcome = np.where(st.success, M.SUCCESS, reason)
        self._record(st.rx, st.dist, outcome)

    def _close(self, st: _Tx) -> None:
        if st.harq and not st.success.all():
            self.results.bump("harq_residual")
        self._finalize(st)

    def flush(self) -> None:
        for pid in sorted(self.txs):
            self._finalize(self.txs[pid])

    def _harq_on(self) -> bool:
        return self.cfg.harq is not None and self.cfg.harq.enabled

    # -- slot tick -----------------------------------------------------------
    def _tick(self, n: int) -> None:
        now = self.engine.now
        self.cur_slot = n
        if n >= 1:
            done = [r for r in self.inflight if r.end <= now]
            if done:
                self.inflight = [r for r in self.inflight if r.end > now]
                for r in done:
                    self.medium.finish(r)
            self._sense(n - 1)
            for r in done:
                self._decode(r)
            self._audit(n - 1)
            self._feedback(n - 1)
            self._resolve_pis(n - 1)
        d = self.cfg.mode2d
        if d is not None and n % d.period_slots == 0:
            self._mode2d(n)
        self._execute(n)
        if n and n % self.cfg.cbr_every_slots == 0:
            self._cbr(n)
        self.engine.schedule(now + self.slot_ns, self._tick, n + 1, kind="sl-tick")

    def _sense(self, slot: int) -> None:
        t0, t1 = slot * self.slot_ns, (slot + 1) * self.slot_ns
        db = self.db
        db.begin_slot(slot)
        power = np.zeros((len(self.ues), self.S))
        own: list[int] = []
        for r in self.medium.overlapping(t0, t1):
            frac = (min(r.end, t1) - max(r.start, t0)) / self.slot_ns
            k = self.k_of.get(r.tx)
            if k is not None:
                own.append(k)
            mw = r.meta.get(self._mw_key)
            if mw is None:
                mw = r.meta[self._mw_key] = r.base_mw[self.ue_nodes]
            for c, sp in enumerate(self.sub_spans):
                cpl = self.medium.coupling_lin(r, sp, self.channel)
                if cpl:
                    power[:, c] += mw * (frac * cpl)
        power += self.sub_noise_mw
        if own:
            power[own, :] = np.nan
        db.record_rssi(slot, np.arange(len(self.ues)), power)

    def _execute(self, n: int) -> None:
        plans = [p for p in self.plans.pop(n, []) if not p.cancelled]
        plans.sort(key=lambda p: p.lbt)
        for p in plans:
            if p.kind == "pi":
                self._transmit(p, 0)
                continue
            u = self.ues[p.k]
            end = (p.slot + p.n_slots) * self.slot_ns
            if end > p.pkt.deadline:
                self._lose(u, p.pkt, p.copy)
                continue
            if p.lbt and self._lbt_busy(u, p):
                self.results.bump("lbt_deferrals")
                self._defer(u, p, n)
                continue
            self._transmit(p, self.gap_ns if p.lbt else 0)

    def _lbt_busy(self, u: _Ue, p: Plan) -> bool:
        span = self._span(p.subch, p.n_subch)
        return self.medium.sensed_dbm(u.node, self.channel, self.engine.now, span) >= self.cfg.lbt_threshold_dbm

    def _defer(self, u: _Ue, p: Plan, n: int) -> None:
        nxt = None
        while p.candidates:
            s, c = p.candidates.pop(0)
            if s > n:
                nxt = (s, c)
                break
        if nxt is None:
            s = n + 1
            allowed = self._allowed(u, np.array([s]), p.n_slots)[0]
            free = np.flatnonzero(allowed[: self.S - p.n_subch + 1])
            if not len(free) or (s + p.n_slots) * self.slot_ns > p.pkt.deadline:
                self._lose(u, p.pkt, p.copy)
                return
            nxt = (s, int(free[u.rng.integers(len(free))]))
        if (nxt[0] + p.n_slots) * self.slot_ns > p.pkt.deadline:
            self._lose(u, p.pkt, p.copy)
            return
        self._add(dataclasses.replace(p, slot=nxt[0], subch=nxt[1], cancelled=False))
        p.cancelled = True

    def _span(self, c0: int, nc: int) -> Span:
        return Span(self.sub_spans[c0].low, self.sub_spans[c0 + nc - 1].high)

    def _power(self, u: _Ue) -> float:
        if self.gate is not None and u.node in self.dual:
            return self.gate.power_dbm(self.radio)
        return self.cfg.power_dbm

    def _transmit(self, p: Plan, offset: int) -> None:
        u = self.ues[p.k]
        pkt = p.pkt
        now = self.engine.now
        rri = 0
        if u.pinned is not None:
            if p.copy == 1 and p.subch == u.pinned[1] and p.slot % self.rri_slots == u.pinned[0]:
                rri = self.rri_slots
        elif p.kind == "sps":
            if u.announced is not None:
                a_slot, a_sub = u.announced
                if p.subch != a_sub or p.slot < a_slot or (p.slot - a_slot) % self.rri_slots:
                    self.results.bump("reservation_violations")
            if u.sps.after_transmission(u.rng):
                u.sps = SpsState()
                u.announced = None
            else:
                rri = self.rri_slots
                u.sps.slot = p.slot + rri
                u.announced = (u.sps.slot, p.subch)
        start = p.slot * self.slot_ns + offset
        end = (p.slot + p.n_slots) * self.slot_ns
        rec = TxRecord(self.medium.new_id(), u.node, self.cfg.rat, self.channel, self._span(p.subch, p.n_subch),
                       self._power(u), start, end)
        rec.meta.update(plan=p, rri=rri)
        if pkt is not None:
            st = self.txs.get(pkt.id)
            if st is None:
                st = self._open(u, pkt, p)
            st.tx_count += 1
            if u.queued is pkt:
                u.queued = None
            if p.kind == "2d":
                u.granted = False
            self.results.bump("transmissions")
        self.tx_log.append((p.slot, u.node, p.subch, p.n_subch, u.group if p.kind == "2d" else -1))
        if offset:
            self.engine.schedule(start, self._begin, rec, target=u.node, kind="sl-begin")
        else:
            self._begin(rec)

    def _open(self, u: _Ue, pkt: Packet, p: Plan) -> _Tx:
        now = self.engine.now
        rx, dist = self._in_range(pkt, now)
        n = len(rx)
        harq = self._harq_on() and pkt.comm_type is not CommType.BROADCAST and bool(pkt.dest)
        k_total = 1
        if not harq:
            k_total = sum(1 for q in u.plans if q.pkt is pkt and not q.cancelled and q.kind != "pi")
            k_total = max(1, k_total)
        st = _Tx(pkt, rx, np.searchsorted(self.rx_nodes, rx), dist, self.counted(pkt),
                 np.zeros(n, dtype=bool), np.full(n, -1, dtype=np.int64), np.full(n, -np.inf),
                 k_total=k_total, harq=harq)
        self.txs[pkt.id] = st
        if st.counted:
            self.results.bump("opportunities", self._n_counted(rx))
            self.results.bump("packets_sent")
            self.results.access_latency_ms.append((p.slot * self.slot_ns + (self.gap_ns if p.lbt else 0)
                                                   - pkt.gen_time) / MS)
        return st

    def _begin(self, rec: TxRecord) -> None:
        self.medium.begin(rec)
        self.inflight.append(rec)
        self.began.setdefault(rec.start // self.slot_ns, []).append(rec)

    # -- reception -----------------------------------------------------------
    def _decode(self, rec: TxRecord) -> None:
        p: Plan = rec.meta["plan"]
        if p.kind == "pi":
            return
        pkt = p.pkt
        u = self.ues[p.k]
        rx = self.rx_nodes
        s = rec.base_dbm[rx]
        noise = self.medium.noise_mw(rec.span.width)
        sci_curve = self.per.get(self.cfg.rat, self.cfg.sci_mcs)
        data_curve = self.per.get(self.cfg.rat, self.cfg.mcs)
        sinr = self.medium.frame_sinr_db(rec, rx, rec.span, self.channel, noise, data_curve.error_free_db)
        sci_sinr = sinr
        if self.medium.p.sinr_averaging == "capped" and sci_curve.error_free_db != data_curve.error_free_db:
            sci_sinr = self.medium.frame_sinr_db(rec, rx, rec.span, self.channel, noise, sci_curve.error_free_db)
        free = s - 10 * np.log10(noise)
        busy = np.zeros(len(self.medium.nodes), dtype=bool)
        busy[rec.tx] = True
        for o in rec.overlaps:
            busy[o.tx] = True
        hd = busy[rx]
        u1 = self.rx_rng.random(len(rx))
        u2 = self.rx_rng.random(len(rx))
        sci_ok = ~hd & (u1 >= sci_curve(sci_sinr))
        # sensing UEs learn the reservation carried by the control channel
        heard = sci_ok[self.rx_ue_pos]
        ks = np.flatnonzero(heard)
        if len(ks):
            rsrp = s[self.rx_ue_pos[ks]] - 10 * math.log10(self.grid.subcarriers(p.n_subch))
            for a in range(p.n_slots):
                sci = SciRecord(u.node, p.slot + a, p.subch, p.n_subch, rec.meta["rri"], self.cfg.mcs,
                                pkt.priority)
                self.db.record_sci(ks, sci, rsrp)
        st = self.txs.get(pkt.id)
        if st is None:
            return
        pos = st.pos
        combine = self._harq_on()
        gain = self.cfg.harq.combining_gain(p.copy) if combine else 0.0
        x = sinr[pos]
        if combine:
            x = np.maximum(st.best, x)
            st.best = x
        ok = sci_ok[pos] & (u2[pos] >= data_curve(x + gain))
        st.success |= ok
        fresh = (st.reason < 0) & ~ok
        if fresh.any():
            f = free[pos]
            coll = (u2[pos] >= data_curve(f + gain)) & (u1[pos] >= sci_curve(f))
            code = np.where(hd[pos], M.HALF_DUPLEX,
                            np.where(coll, M.PI_LOSS if p.pi_conflict else M.COLLISION, M.SINR_FAIL))
            st.reason[fresh] = code[fresh]
        st.copies += 1
        if st.harq:
            self._send_feedback(st, p, rec)
        elif st.copies >= st.k_total:
            self._finalize(st)

    # -- feedback ------------------------------------------------------------
    def _send_feedback(self, st: _Tx, p: Plan, rec: TxRecord) -> None:
        h = self.cfg.harq
        if not len(st.rx):
            self._close(st)
            return
        f = h.psfch_slot(p.slot + p.n_slots - 1)
        st.feedback = {}
        st.awaiting = len(st.rx)
        for j, d in enumerate(st.rx):
            key = (f, p.subch, j)
            self.psfch.setdefault(f, []).append((st, int(d), bool(st.success[j]), key, rec.tx))

    def _feedback(self, slot: int) -> None:
        entries = self.psfch.pop(slot, [])
        if not entries:
            return
        seen: dict = {}
        for e in entries:
            seen[e[3]] = seen.get(e[3], 0) + 1
        curve = self.per.get(self.cfg.rat, "BPSK-1/2")
        now = self.engine.now
        for st, d, ack, key, tx in entries:
            if seen[key] > 1:
                heard = False
                self.results.bump("psfch_collisions")
            else:
                snr = self.medium.base_power(d, self.cfg.power_dbm, now)[tx] - 10 * math.log10(self.sub_noise_mw)
                heard = bool(self.rx_rng.random() >= curve(snr))
            st.feedback[d] = ack and heard
            self.results.bump("harq_ack" if ack and heard else "harq_nack")
            st.awaiting -= 1
            if st.awaiting == 0 and st.pkt.id in self.txs:
                self._after_feedback(st)

    def _after_feedback(self, st: _Tx) -> None:
        if all(st.feedback.values()) or st.tx_count >= self.cfg.harq.max_tx:
            self._close(st)
            return
        u = self.ues[self.k_of[st.pkt.origin]]
        self._schedule_packet(u, st.pkt, copy=st.tx_count + 1, kind="harq")

    # -- pre-emption ---------------------------------------------------------
    def _preempt(self, u: _Ue, pkt: Packet, now_slot: int, slots: np.ndarray, allowed: np.ndarray) -> bool:
        fp = self._footprint(pkt)
        if fp != (1, 1):
            return False
        rsrp, prio, origin = _projected_sci(self.db, u.k, now_slot, slots, self.sel.rri_set)
        reserved = (rsrp > self.sel.rsrp_threshold_dbm) & allowed
        rows = [(int(slots[i]), int(c), int(origin[i, c]), int(prio[i, c])) for i, c in np.argwhere(reserved)]
        pi = choose_victim(rows, pkt.priority, u.node, free_exists=False)
        if pi is None:
            return False
        claim = Plan(u.k, pkt, pi.slot, pi.subch, kind="pre")
        self._add(claim)
        self.pis.setdefault(now_slot + 1, []).append((pi, claim))
        if self.cfg.preemption.pool == "shared":
            self._add(Plan(u.k, None, now_slot + 1, 0, kind="pi"))
        self.results.bump("preemptions")
        return True

    def _resolve_pis(self, slot: int) -> None:
        for pi, claim in self.pis.pop(slot, []):
            vk = self.k_of.get(pi.victim)
            if vk is None:
                continue
            v = self.ues[vk]
            pre = self.ues[claim.k]
            snr = self.medium.base_power(pre.node, self._power(pre), self.engine.now)[v.node] \
                - 10 * math.log10(self.sub_noise_mw)
            curve = self.per.get(self.cfg.rat, self.cfg.preemption.pi_mcs)
            victims = [p for p in v.plans if not p.cancelled and p.slot <= pi.slot < p.slot + p.n_slots
                       and p.subch <= pi.subch < p.subch + p.n_subch]
            if self.rx_rng.random() >= curve(snr):
                self.results.bump("pi_decoded")
                if v.sps.active and v.sps.slot == pi.slot:
                    v.sps = SpsState()
                    v.announced = None
                if v.pinned is not None:
                    v.skip.add(pi.slot)
                for p in victims:
                    p.cancelled = True
                    self._schedule_packet(v, p.pkt, exclude=[(pi.slot, pi.subch)], copy=p.copy)
            else:
                self.results.bump("pi_missed")
                claim.pi_conflict = True
                for p in victims:
                    p.pi_conflict = True

    # -- mode 2(d) -----------------------------------------------------------
    def _mode2d(self, n: int) -> None:
        d = self.cfg.mode2d
        first = n + self.t1
        pool = [(s, c) for s in range(first, first + d.period_slots) for c in d.pool_subch]
        for gi, members in enumerate(d.groups):
            demands, prios = {}, {}
            for m in members:
                u = self.ues[self.k_of[m]]
                if u.queued is not None and not u.granted:
                    fp = self._footprint(u.queued)
                    if fp != (1, 1):
                        self.results.bump("oversize")
                        self._drop(u.queued, M.DEADLINE_MISS)
                        u.queued = None
                        continue
                    demands[m] = 1
                    prios[m] = u.queued.priority
            if not demands:
                continue
            s_ue = self.ues[self.k_of[members[0]]]
            res = mode2d_schedule(members[0], members, demands, pool, prios, s_ue.rng)
            for m, cells in res.grants.items():
                u = self.ues[self.k_of[m]]
                slot, c = cells[0]
                self._add(Plan(u.k, u.queued, slot, c, kind="2d", group=gi))
                u.granted = True
            self.results.bump("mode2d_deferrals", len(res.deferred))

    # -- audits and channel load ---------------------------------------------
    def _audit(self, slot: int) -> None:
        recs = [r for r in self.began.pop(slot, []) if r.meta["plan"].kind != "pi"]
        if not recs:
            return
        flagged = set()
        for a in range(len(recs)):
            pa: Plan = recs[a].meta["plan"]
            for b in range(a + 1, len(recs)):
                pb: Plan = recs[b].meta["plan"]
                if pa.subch + pa.n_subch <= pb.subch or pb.subch + pb.n_subch <= pa.subch:
                    continue
                if pa.kind == "2d" and pb.kind == "2d" and pa.group == pb.group:
                    self.results.bump("mode2d_intra_collisions")
                d = self.medium.nodes.distance(recs[a].tx, recs[b].tx, recs[a].start)
                if d < self.cfg.collision_range_m:
                    flagged.update((a, b))
        for j, r in enumerate(recs):
            pkt = r.meta["plan"].pkt
            if pkt is None or not self.counted(pkt):
                continue
            self.results.bump("sr_tx")
            if j in flagged:
                self.results.bump("sr_collided")

    def _cbr(self, n: int) -> None:
        L = min(self.cfg.cbr_every_slots, self.W)
        idx = np.mod(n - 1 - np.arange(L), self.W)
        vals = self.db.rssi[:, idx, :]
        thr = float(dbm_to_mw(self.cfg.cbr_threshold_dbm))
        valid = ~np.isnan(vals)
        if not valid.any():
            return
        busy = np.where(valid, vals > thr, False).sum(axis=(1, 2))
        cnt = valid.sum(axis=(1, 2))
        frac = busy[cnt > 0] / cnt[cnt > 0]
        self.results.cbr_series.append((self.engine.now / S, float(frac.mean())))

    # -- reporting -----------------------------------------------------------
    def collision_rate(self) -> float | None:
        tx = self.results.counters.get("sr_tx", 0)
        return self.results.counters.get("sr_collided", 0) / tx if tx else None


def random_resource(now_slot: int, t1: int, t2: int, n_subch_total: int, rng: np.random.Generator,
                    ls: int = 1, lc: int = 1, allowed: np.ndarray | None = None):
    """Uniform pick over every feasible start in the window, ignoring sensing."""
    from .cv2x import Selection
    slots = window_slots(now_slot, t1, t2)
    if len(slots) < ls:
        return None
    cell_ok = np.ones((len(slots), n_subch_total), dtype=bool) if allowed is None else allowed
    ok = ~_footprint_reduce(~cell_ok, ls, lc, "any")
    idx = np.argwhere(ok)
    if not len(idx):
        return None
    r, c = idx[rng.integers(len(idx))]
    return Selection(int(slots[r]), int(c), ls, lc, random=True)
