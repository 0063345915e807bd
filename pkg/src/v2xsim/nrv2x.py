"""NR sidelink mode 2: numerology, grants, group scheduling, feedback-driven
retransmission, pre-emption and in-device coexistence with an LTE sidelink."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .core import MS, ConfigError
from .cv2x import ResourceGrid

SYMBOLS_PER_SLOT = 14
V_REF_MPS = 140 / 3.6
# PRBs available in a 10 MHz carrier per subcarrier spacing
PRB_10MHZ = {0: 52, 1: 24, 2: 11}


@dataclass(frozen=True)
class Numerology:
    mu: int = 0

    def __post_init__(self):
        if self.mu not in (0, 1, 2):
            raise ConfigError(f"numerology mu must be 0, 1 or 2 below 6 GHz, got {self.mu}")

    @property
    def scs_khz(self) -> int:
        return 15 * 2 ** self.mu

    @property
    def slot_ns(self) -> int:
        return MS >> self.mu

    @property
    def symbol_ns(self) -> float:
        return self.slot_ns / SYMBOLS_PER_SLOT

    def symbol_boundary(self, k: int) -> int:
        """Start of symbol k within a slot, rounded to the nanosecond grid."""
        return (k * self.slot_ns) // SYMBOLS_PER_SLOT


class GrantKind(str, Enum):
    FULL_SLOT = "FullSlot"
    MINI_SLOT = "MiniSlot"
    MULTI_SLOT = "MultiSlot"


@dataclass(frozen=True)
class SlotGrant:
    kind: GrantKind = GrantKind.FULL_SLOT
    slot: int = 0
    subch: int = 0
    start_symbol: int = 0
    symbol_count: int = SYMBOLS_PER_SLOT
    n_slots: int = 1
    n_subch: int = 1

    def __post_init__(self):
        if self.kind is GrantKind.MINI_SLOT:
            if not 0 <= self.start_symbol <= 13 or self.symbol_count < 1 \
                    or self.start_symbol + self.symbol_count > SYMBOLS_PER_SLOT:
                raise ConfigError("mini-slot must satisfy 0 <= start <= 13 and start + count <= 14")
        if self.n_slots < 1 or self.n_subch < 1:
            raise ConfigError("grant must cover at least one slot and one subchannel")

    @classmethod
    def mini(cls, start: int, count: int, slot: int = 0, subch: int = 0) -> "SlotGrant":
        return cls(GrantKind.MINI_SLOT, slot, subch, start, count)

    @classmethod
    def multi(cls, n: int, slot: int = 0, subch: int = 0) -> "SlotGrant":
        return cls(GrantKind.MULTI_SLOT, slot, subch, n_slots=n)


def slot_timing(num: Numerology, grant: SlotGrant) -> tuple[int, int]:
    """(start, duration) in ns of a grant."""
    base = grant.slot * num.slot_ns
    if grant.kind is GrantKind.MINI_SLOT:
        s = num.symbol_boundary(grant.start_symbol)
        e = num.symbol_boundary(grant.start_symbol + grant.symbol_count)
        return base + s, e - s
    if grant.kind is GrantKind.MULTI_SLOT:
        return base, grant.n_slots * num.slot_ns
    return base, num.slot_ns


def dmrs_symbols(mu: int, high_speed: bool = True) -> int:
    """DMRS symbols per slot: dense at 15 kHz for fast vehicles, sparse at 60 kHz."""
    if high_speed:
        return {0: 4, 1: 3, 2: 2}[mu]
    return 2


def sensing_window_ms(speed_mps: float, base_ms: float = 1000.0, floor_ms: float = 200.0) -> float:
    if speed_mps <= 0:
        return base_ms
    return max(floor_ms, base_ms * V_REF_MPS / speed_mps)


def nr_grid(mu: int, subch_prb: int = 10, high_speed: bool = True, ctrl_symbols: int = 2) -> ResourceGrid:
    num = Numerology(mu)
    n_subch = max(1, PRB_10MHZ[mu] // subch_prb)
    return ResourceGrid(slot_ns=num.slot_ns, n_subch=n_subch, subch_rb=subch_prb,
                        dmrs_symbols=dmrs_symbols(mu, high_speed), guard_symbols=1, ctrl_rb=0,
                        ctrl_symbols=ctrl_symbols, rb_khz=180.0 * 2 ** mu)


def receiver_busy_ns(num: Numerology, addressed: bool, ctrl_symbols: int = 2) -> int:
    """Time a receiver spends on a slot: control first, then data only if addressed."""
    if addressed:
        return num.slot_ns
    return num.symbol_boundary(ctrl_symbols)


# ---------------------------------------------------------------------------
# Mode 2(d): a scheduling UE hands out orthogonal grants to its group


@dataclass
class Mode2dResult:
    grants: dict[int, list[tuple[int, int]]]       # member -> [(slot, subch)]
    deferred: list[int]


def mode2d_schedule(s_ue: int, members: Sequence[int], demands: dict[int, int],
                    pool: Sequence[tuple[int, int]], priorities: dict[int, int] | None = None,
                    rng: np.random.Generator | None = None) -> Mode2dResult:
    """Assign pairwise-distinct pool cells; lowest-priority members wait a period.

    `demands[m]` is the number of cells member m needs; members are served in
    descending priority (ties by member id). A member is deferred when its whole
    demand no longer fits.
    """
    priorities = priorities or {}
    cells = list(pool)
    if len(set(cells)) != len(cells):
        raise ConfigError("mode 2(d) pool lists a cell twice")
    if rng is not None:
        cells = [cells[i] for i in rng.permutation(len(cells))]
    order = sorted((m for m in members if demands.get(m, 0) > 0),
                   key=lambda m: (-priorities.get(m, 0), m))
    grants: dict[int, list[tuple[int, int]]] = {}
    deferred: list[int] = []
    free = 0
    for m in order:
        need = demands[m]
        if free + need <= len(cells):
            grants[m] = cells[free:free + need]
            free += need
        else:
            deferred.append(m)
    return Mode2dResult(grants, deferred)


# ---------------------------------------------------------------------------
# Feedback-driven retransmission


@dataclass
class HarqParams:
    enabled: bool = True
    max_tx: int = 3
    gain_per_copy_db: float = 3.0
    gain_cap_db: float = 8.0
    psfch_period: int = 1
    psfch_gap_slots: int = 2

    def __post_init__(self):
        if self.max_tx < 1:
            raise ConfigError("harq.max_tx must be >= 1")
        if self.psfch_period < 1 or self.psfch_gap_slots < 0:
            raise ConfigError("PSFCH period must be >= 1 and gap >= 0")

    def combining_gain(self, copy_index: int) -> float:
        return min(self.gain_per_copy_db * (copy_index - 1), self.gain_cap_db)

    def psfch_slot(self, end_slot: int) -> int:
        s = end_slot + self.psfch_gap_slots
        return s + (-s) % self.psfch_period


@dataclass
class HarqOutcome:
    transmissions: int
    acks: int
    nacks: int
    delivered: dict[int, bool]
    residual_loss: bool


def harq_cycle(receivers: Sequence[int], attempt: Callable[[int, int, float], bool],
               params: HarqParams, feedback_ok: Callable[[int, int], bool] | None = None) -> HarqOutcome:
    """Run one HARQ process.

    attempt(copy, rx, gain_db) -> decoded?; feedback_ok(copy, rx) -> feedback
    delivered? (lost feedback counts as NACK). Retransmits while any receiver
    still reports NACK, up to max_tx transmissions in total.
    """
    delivered = {r: False for r in receivers}
    acks = nacks = 0
    tx = 0
    while tx < params.max_tx:
        tx += 1
        gain = params.combining_gain(tx)
        all_ack = True
        for r in receivers:
            if not delivered[r]:
                delivered[r] = bool(attempt(tx, r, gain))
            heard = feedback_ok(tx, r) if feedback_ok is not None else True
            if delivered[r] and heard:
                acks += 1
            else:
                nacks += 1
                all_ack = False
        if all_ack or not params.enabled:
            break
    return HarqOutcome(tx, acks, nacks, delivered, not all(delivered.values()))


# ---------------------------------------------------------------------------
# Pre-emption


@dataclass(frozen=True)
class PreemptionIndication:
    preemptor: int
    victim: int
    slot: int
    subch: int
    priority_delta: int

    def __post_init__(self):
        if self.priority_delta <= 0:
            raise ConfigError("pre-emption requires strictly higher priority than the victim")


def choose_victim(reserved: Sequence[tuple[int, int, int, int]], priority: int, ue: int,
                  free_exists: bool) -> PreemptionIndication | None:
    """reserved rows: (slot, subch, victim_ue, victim_priority) inside the budget.

    Returns None when a free resource exists or no strictly lower priority
    reservation is present. Prefers the lowest priority, then the earliest slot.
    """
    if free_exists:
        return None
    cands = [r for r in reserved if r[3] < priority and r[2] != ue]
    if not cands:
        return None
    slot, subch, victim, vprio = min(cands, key=lambda r: (r[3], r[0], r[1]))
    return PreemptionIndication(ue, victim, slot, subch, priority - vprio)


# ---------------------------------------------------------------------------
# In-device coexistence of the LTE and NR sidelink radios


class Radio(str, Enum):
    CV2X = "CV2X"
    NRV2X = "NRV2X"


class GateDecision(str, Enum):
    PERMIT_FULL = "PermitFullPower"
    PERMIT = "Permit"
    DENY = "Deny"


@dataclass
class DualRatPolicy:
    kind: str = "TDM"                       # TDM | FDM
    period_ms: float = 20.0
    cv2x_share: float = 0.5                 # TDM: leading fraction of the period given to C-V2X
    total_power_dbm: float = 23.0
    split_db: tuple[float, float] = (-3.0, -3.0)

    def __post_init__(self):
        if self.kind not in ("TDM", "FDM"):
            raise ConfigError("dual-radio policy must be TDM or FDM")
        if self.kind == "TDM" and not 0.0 < self.cv2x_share < 1.0:
            raise ConfigError("cv2x_share must lie strictly between 0 and 1")
        if self.kind == "FDM":
            total = 10 * math.log10(sum(10 ** (d / 10) for d in self.split_db))
            if total > 0.05:          # -3/-3 dB is the usual shorthand for an even split
                raise ConfigError("FDM power split must not exceed the total-power cap")

    @property
    def period_ns(self) -> int:
        return int(round(self.period_ms * MS))

    def window(self, radio: Radio) -> tuple[int, int]:
        """[start, end) offsets within the period owned by `radio`."""
        cut = int(round(self.period_ns * self.cv2x_share))
        return (0, cut) if Radio(radio) is Radio.CV2X else (cut, self.period_ns)

    def window_length_ns(self, radio: Radio) -> int:
        a, b = self.window(radio)
        return b - a

    def permits(self, radio: Radio, start, end) -> np.ndarray:
        """Vectorised: True where [start, end) lies inside the radio's TDM window."""
        start = np.asarray(start, dtype=np.int64)
        end = np.asarray(end, dtype=np.int64)
        if self.kind == "FDM":
            return np.ones(start.shape, dtype=bool)
        a, b = self.window(radio)
        p = self.period_ns
        off = np.mod(start, p)
        return (off >= a) & (off + (end - start) <= b)

    def power_dbm(self, radio: Radio) -> float:
        if self.kind == "TDM":
            return self.total_power_dbm
        k = 0 if Radio(radio) is Radio.CV2X else 1
        return self.total_power_dbm + self.split_db[k]


def dual_rat_gate(policy: DualRatPolicy, radio: Radio | str, t: int) -> tuple[GateDecision, float]:
    radio = Radio(radio)
    if policy.kind == "FDM":
        return GateDecision.PERMIT, policy.power_dbm(radio)
    a, b = policy.window(radio)
    off = t % policy.period_ns
    if a <= off < b:
        return GateDecision.PERMIT_FULL, policy.total_power_dbm
    return GateDecision.DENY, -math.inf
