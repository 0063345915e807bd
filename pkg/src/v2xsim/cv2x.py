"""C-V2X sidelink mode 4: resource grid, sensing database and sensing-based
semi-persistent selection.

The selection routine is written against a generic slot grid so the NR
sidelink reuses it with shorter slots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import MS, ConfigError

BITS_PER_RE = {"QPSK-1/2": 1.0, "16QAM-1/2": 2.0, "16QAM-3/4": 3.0, "64QAM-2/3": 4.0, "64QAM-3/4": 4.5}
SUBCARRIERS_PER_RB = 12
CRC_BITS = 24


class OversizeError(ConfigError):
    """Packet cannot fit in the grid at the configured MCS."""


@dataclass(frozen=True)
class ResourceGrid:
    slot_ns: int = 1 * MS
    n_subch: int = 2
    subch_rb: int = 25
    symbols: int = 14
    dmrs_symbols: int = 4
    guard_symbols: int = 1
    ctrl_rb: int = 2              # control carried in frequency next to data (LTE style)
    ctrl_symbols: int = 0         # control carried in time before data (NR style)
    rb_khz: float = 180.0

    def __post_init__(self):
        if self.n_subch < 1 or self.subch_rb < 1:
            raise ConfigError("grid needs at least one subchannel of one RB")
        if self.data_symbols < 1:
            raise ConfigError("no data symbols left after DMRS, control and guard")

    @property
    def data_symbols(self) -> int:
        return self.symbols - self.dmrs_symbols - self.guard_symbols - self.ctrl_symbols

    def capacity_bits(self, n_subch: int, mcs: str = "QPSK-1/2") -> int:
        """Transport bits in one slot over n adjacent subchannels (control sent once)."""
        try:
            bpr = BITS_PER_RE[mcs]
        except KeyError:
            raise ConfigError(f"unsupported sidelink MCS {mcs!r}") from None
        rbs = n_subch * self.subch_rb - self.ctrl_rb
        return int(rbs * SUBCARRIERS_PER_RB * self.data_symbols * bpr)

    def footprint(self, size_bytes: int, mcs: str = "QPSK-1/2", max_slots: int = 1) -> tuple[int, int]:
        """(slots, subchannels) needed: widen in frequency first, then in time."""
        bits = 8 * size_bytes + CRC_BITS
        for ls in range(1, max_slots + 1):
            for lc in range(1, self.n_subch + 1):
                if ls * self.capacity_bits(lc, mcs) >= bits:
                    return ls, lc
        raise OversizeError(f"{size_bytes} B does not fit in {max_slots} slot(s) x {self.n_subch} subchannels at {mcs}")

    def subch_span_mhz(self, channel_low_mhz: float, channel_bw_mhz: float, c0: int, nc: int) -> tuple[float, float]:
        """Frequency interval of subchannels [c0, c0+nc), centred in the channel."""
        width = self.rb_khz / 1000.0 * self.subch_rb
        used = width * self.n_subch
        lo = channel_low_mhz + (channel_bw_mhz - used) / 2
        return lo + c0 * width, lo + (c0 + nc) * width

    def subcarriers(self, nc: int) -> int:
        return nc * self.subch_rb * SUBCARRIERS_PER_RB


@dataclass(frozen=True)
class SciRecord:
    origin: int
    slot: int
    subch: int
    n_subch: int = 1
    rri_slots: int = 100
    mcs: str = "QPSK-1/2"
    priority: int = 0
    remaining: int = 1


@dataclass
class SpsState:
    slot: int = -1            # next reserved occurrence (absolute slot index)
    subch: int = 0
    n_subch: int = 1
    n_slots: int = 1
    counter: int = 0
    keep_probability: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.keep_probability <= 0.8:
            raise ConfigError("keep_probability must lie in [0, 0.8]")

    @property
    def active(self) -> bool:
        return self.slot >= 0

    def after_transmission(self, rng: np.random.Generator) -> bool:
        """Decrement once per transmission; True when the UE must reselect."""
        self.counter -= 1
        if self.counter > 0:
            return False
        if rng.random() < self.keep_probability:
            self.counter = draw_counter(rng)
            return False
        return True


def draw_counter(rng: np.random.Generator, lo: int = 5, hi: int = 15) -> int:
    return int(rng.integers(lo, hi + 1))


class SensingDb:
    """Ring buffers of per-slot sensed power and decoded SCIs for a set of UEs.

    rssi[u, slot % W, c] holds total received power in subchannel c (mW,
    noise included) or NaN where UE u could not listen (its own transmission)
    or has not listened yet. SCI arrays hold RSRP (dBm per resource element),
    announced reservation interval (slots, 0 = none) and priority.
    """

    def __init__(self, n_ue: int, window_slots: int, n_subch: int):
        if window_slots < 1:
            raise ConfigError("sensing window must be at least one slot")
        self.W = window_slots
        self.S = n_subch
        self.rssi = np.full((n_ue, window_slots, n_subch), np.nan, dtype=np.float64)
        self.sci_rsrp = np.full((n_ue, window_slots, n_subch), -np.inf, dtype=np.float64)
        self.sci_rri = np.zeros((n_ue, window_slots, n_subch), dtype=np.int32)
        self.sci_prio = np.zeros((n_ue, window_slots, n_subch), dtype=np.int16)
        self.sci_origin = np.full((n_ue, window_slots, n_subch), -1, dtype=np.int32)
        self.first_slot = np.full(n_ue, -1, dtype=np.int64)   # first slot sensed per UE
        self.last_slot = -1

    def begin_slot(self, slot: int) -> None:
        k = slot % self.W
        self.rssi[:, k, :] = np.nan
        self.sci_rsrp[:, k, :] = -np.inf
        self.sci_rri[:, k, :] = 0
        self.sci_origin[:, k, :] = -1

    def record_rssi(self, slot: int, ues, values: np.ndarray) -> None:
        ues = np.asarray(ues)
        self.rssi[ues, slot % self.W, :] = values
        fresh = self.first_slot[ues] < 0
        if fresh.any():
            self.first_slot[ues[fresh]] = slot
        self.last_slot = max(self.last_slot, slot)

    def record_sci(self, ues, sci: SciRecord, rsrp_dbm) -> None:
        ues = np.asarray(ues)
        for a in range(sci.n_subch):
            c = sci.subch + a
            self.sci_rsrp[ues, sci.slot % self.W, c] = rsrp_dbm
            self.sci_rri[ues, sci.slot % self.W, c] = sci.rri_slots
            self.sci_prio[ues, sci.slot % self.W, c] = sci.priority
            self.sci_origin[ues, sci.slot % self.W, c] = sci.origin

    def warm(self, ue: int, now_slot: int) -> bool:
        f = self.first_slot[ue]
        return f >= 0 and now_slot - f >= self.W


@dataclass
class SelectionParams:
    t1_slots: int = 4
    rsrp_threshold_dbm: float = -110.0
    rsrp_step_db: float = 3.0
    rsrp_max_dbm: float = -50.0
    min_fraction: float = 0.2
    rssi_period_slots: int = 100
    rssi_periods: int = 10
    averaging: bool = True
    rri_set: tuple[int, ...] = (100,)


@dataclass
class Selection:
    slot: int
    subch: int
    n_slots: int = 1
    n_subch: int = 1
    forced: bool = False
    random: bool = False
    threshold_dbm: float | None = None
    candidates: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))  # (slot, subch) rows


def _projected_sci(db: SensingDb, ue: int, now_slot: int, slots: np.ndarray, rri_set):
    """Most recent sensed SCI whose reservation lands on each (slot, subch) cell.

    Returns (rsrp, priority, origin) arrays shaped (len(slots), S), with -inf
    RSRP where no reservation projects onto the cell.
    """
    rsrp = np.full((len(slots), db.S), -np.inf)
    prio = np.zeros((len(slots), db.S), dtype=np.int16)
    origin = np.full((len(slots), db.S), -1, dtype=np.int32)
    for p in rri_set:
        if p <= 0:
            continue
        j = np.ceil((slots - now_slot + 1) / p).astype(np.int64)
        j = np.maximum(j, 1)
        z = slots - j * p
        ok = (z >= now_slot - db.W) & (z <= now_slot - 1) & (z >= 0)
        zi = np.mod(z, db.W)
        r = db.sci_rsrp[ue, zi, :]
        match = (db.sci_rri[ue, zi, :] == p) & ok[:, None]
        r = np.where(match, r, -np.inf)
        better = r > rsrp
        rsrp = np.where(better, r, rsrp)
        prio = np.where(better, db.sci_prio[ue, zi, :], prio)
        origin = np.where(better, db.sci_origin[ue, zi, :], origin)
    return rsrp, prio, origin


def _avg_rssi(db: SensingDb, ue: int, now_slot: int, slots: np.ndarray, p: SelectionParams) -> np.ndarray:
    step = p.rssi_period_slots
    j0 = np.maximum(np.ceil((slots - now_slot + 1) / step).astype(np.int64), 1)
    k = p.rssi_periods if p.averaging else 1
    js = j0[:, None] + np.arange(k)[None, :]
    z = slots[:, None] - js * step                          # (win, k)
    ok = (z >= now_slot - db.W) & (z >= 0)
    vals = db.rssi[ue, np.mod(z, db.W), :]                  # (win, k, S)
    vals = np.where(ok[:, :, None], vals, np.nan)
    cnt = np.sum(~np.isnan(vals), axis=1)
    tot = np.nansum(vals, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        avg = np.where(cnt > 0, tot / np.maximum(cnt, 1), np.inf)
    return avg


def _footprint_reduce(cell: np.ndarray, ls: int, lc: int, how: str) -> np.ndarray:
    """Combine per-cell values over each candidate's footprint (start-anchored)."""
    n, s = cell.shape
    out_n, out_s = n - ls + 1, s - lc + 1
    if out_n <= 0 or out_s <= 0:
        return np.zeros((max(out_n, 0), max(out_s, 0)), dtype=cell.dtype)
    acc = None
    for a in range(ls):
        for b in range(lc):
            part = cell[a:a + out_n, b:b + out_s]
            if acc is None:
                acc = part.copy()
            elif how == "any":
                acc |= part
            elif how == "max":
                acc = np.maximum(acc, part)
            else:
                acc = acc + part
    if how == "mean":
        acc = acc / (ls * lc)
    return acc


def window_slots(now_slot: int, t1: int, t2: int) -> np.ndarray:
    if t2 < t1:
        return np.zeros(0, dtype=np.int64)
    return np.arange(now_slot + t1, now_slot + t2 + 1, dtype=np.int64)


def exclusion_mask(db: SensingDb, ue: int, now_slot: int, slots: np.ndarray, threshold_dbm: float,
                   p: SelectionParams) -> np.ndarray:
    rsrp, _, _ = _projected_sci(db, ue, now_slot, slots, p.rri_set)
    return rsrp > threshold_dbm


def select_resource(db: SensingDb, ue: int, now_slot: int, t2_slots: int, p: SelectionParams,
                    rng: np.random.Generator, n_slots: int = 1, n_subch: int = 1,
                    allowed: np.ndarray | None = None, strict: bool = False) -> Selection | None:
    """Sensing-based selection over slots (now+t1 .. now+t2) x subchannels.

    `allowed` (window x S) masks cells a UE may not use (pools, dual-radio
    gating). With `strict`, exclusion stays at the base threshold and None is
    returned when nothing remains (callers then pre-empt or drop).
    """
    slots = window_slots(now_slot, p.t1_slots, t2_slots)
    if len(slots) < n_slots:
        return None
    cell_ok = np.ones((len(slots), db.S), dtype=bool) if allowed is None else allowed.astype(bool)
    cand_ok = _footprint_reduce(~cell_ok, n_slots, n_subch, "any")
    cand_ok = ~cand_ok
    n_total = int(cand_ok.sum())
    if n_total == 0:
        return None
    starts = slots[: cand_ok.shape[0]]
    c_target = math.ceil(p.min_fraction * n_total)

    if not db.warm(ue, now_slot):
        idx = np.argwhere(cand_ok)
        pick = idx[rng.integers(len(idx))]
        return Selection(int(starts[pick[0]]), int(pick[1]), n_slots, n_subch, random=True,
                         candidates=np.column_stack([starts[idx[:, 0]], idx[:, 1]]))

    rsrp, _, _ = _projected_sci(db, ue, now_slot, slots, p.rri_set)
    rsrp_fp = _footprint_reduce(rsrp, n_slots, n_subch, "max")
    thr = p.rsrp_threshold_dbm
    while True:
        remaining = cand_ok & ~(rsrp_fp > thr)
        n_rem = int(remaining.sum())
        if strict:
            break
        if n_rem >= c_target or thr >= p.rsrp_max_dbm:
            break
        thr = min(thr + p.rsrp_step_db, p.rsrp_max_dbm)
    avg = _avg_rssi(db, ue, now_slot, slots, p)
    avg_fp = _footprint_reduce(avg, n_slots, n_subch, "mean")
    if n_rem == 0:
        if strict:
            return None
        # nothing survives even the loosest threshold: take the quietest resource
        vals = np.where(cand_ok, avg_fp, np.inf)
        flat = np.flatnonzero(vals == vals.min())
        pick = flat[rng.integers(len(flat))]
        r, c = np.unravel_index(pick, vals.shape)
        return Selection(int(starts[r]), int(c), n_slots, n_subch, forced=True, threshold_dbm=thr,
                         candidates=np.array([[starts[r], c]]))
    idx = np.argwhere(remaining)
    score = avg_fp[idx[:, 0], idx[:, 1]]
    tie = rng.random(len(idx))
    order = np.lexsort((tie, score))
    keep = idx[order[: min(c_target, len(idx))]]
    pick = keep[rng.integers(len(keep))]
    return Selection(int(starts[pick[0]]), int(pick[1]), n_slots, n_subch, threshold_dbm=thr,
                     candidates=np.column_stack([starts[keep[:, 0]], keep[:, 1]]))


def transmit_sidelink(grid: ResourceGrid, size_bytes: int, selection: Selection, blind_retx: Selection | None = None,
                      mcs: str = "QPSK-1/2") -> list[tuple[int, int, int, int]]:
    """Records (slot, subch, n_slots, n_subch) a packet occupies; checks capacity."""
    ls, lc = grid.footprint(size_bytes, mcs, max_slots=max(1, selection.n_slots))
    if lc > selection.n_subch or ls > selection.n_slots:
        raise OversizeError(f"{size_bytes} B needs {ls}x{lc} but the grant is {selection.n_slots}x{selection.n_subch}")
    out = [(selection.slot, selection.subch, selection.n_slots, selection.n_subch)]
    if blind_retx is not None:
        if (blind_retx.slot, blind_retx.subch) == (selection.slot, selection.subch):
            raise ConfigError("blind retransmission must use a distinct resource")
        out.append((blind_retx.slot, blind_retx.subch, blind_retx.n_slots, blind_retx.n_subch))
    return out
