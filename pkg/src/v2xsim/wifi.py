"""Saturated Wi-Fi BSS used as an interferer, with coexistence mitigations."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .core import MS, US, ConfigError, Engine, RngFactory
from .dsrc import CsmaStation, EdcaParams
from .medium import CcaGroup, Medium, TxRecord
from .radio import ChannelDef, PerTable, Span


class Mitigation(str, Enum):
    NO_COEX = "NoCoex"
    DISABLE_AGGREGATION = "DisableAggregation"
    AIFS_900 = "Aifs900"
    REDUCED_SENSITIVITY = "ReducedSensitivity"
    COMBINED = "Combined"


@dataclass(frozen=True)
class WifiConfig:
    channel: int = 177
    bandwidth_mhz: float = 20.0
    tx_power_dbm: float = 23.0
    clients: int = 10
    phy_rate_mbps: float = 24.0
    mpdu_bytes: int = 1500
    aggregation: bool = True
    ampdu_cap_ms: float = 4.0
    aifs_us: float = 34.0
    cca_dbm: float = -80.0             # detect level toward non-Wi-Fi signals
    slot_us: float = 9.0
    sifs_us: float = 16.0
    cw_min: int = 15
    cw_max: int = 1023
    preamble_us: float = 20.0
    symbol_us: float = 4.0
    ack_bytes: int = 14
    data_mcs: str = "16QAM-1/2"
    ack_mcs: str = "BPSK-1/2"
    client_distance_m: float = 10.0
    retry_limit: int = 7

    def __post_init__(self):
        if self.clients < 1:
            raise ConfigError("wifi.clients must be >= 1")
        if self.phy_rate_mbps <= 0 or self.ampdu_cap_ms <= 0:
            raise ConfigError("wifi rates and airtime cap must be positive")
        if self.cw_max < self.cw_min:
            raise ConfigError("wifi.cw_max must be >= cw_min")

    @property
    def channel_def(self) -> ChannelDef:
        return ChannelDef.its(self.channel, self.bandwidth_mhz)

    def mpdu_airtime_ns(self) -> int:
        """Preamble plus data symbols of one MPDU at the configured rate."""
        data_us = 8 * self.mpdu_bytes / self.phy_rate_mbps
        data_us = math.ceil(round(data_us / self.symbol_us, 9)) * self.symbol_us
        return int(round((self.preamble_us + data_us) * US))

    def access_airtime_ns(self) -> int:
        """Medium-hold time of one data PPDU: an A-MPDU fills the cap exactly."""
        if self.aggregation:
            return int(round(self.ampdu_cap_ms * MS))
        return self.mpdu_airtime_ns()

    def ack_airtime_ns(self) -> int:
        bits = 16 + 8 * self.ack_bytes + 6
        bps = self.phy_rate_mbps * self.symbol_us
        return int(round((self.preamble_us + math.ceil(bits / bps) * self.symbol_us) * US))

    def edca(self) -> EdcaParams:
        return EdcaParams(aifsn=2, cw=self.cw_min, slot_ns=int(round(self.slot_us * US)),
                          sifs_ns=int(round(self.sifs_us * US)), cw_max=self.cw_max,
                          aifs_override_ns=int(round(self.aifs_us * US)))


def apply_mitigation(cfg: WifiConfig, m: Mitigation | str, reduced_cca_dbm: float = -82.0,
                     aifs_us: float = 900.0) -> WifiConfig:
    m = Mitigation(m)
    changes: dict = {}
    if m in (Mitigation.DISABLE_AGGREGATION, Mitigation.COMBINED):
        changes["aggregation"] = False
    if m in (Mitigation.AIFS_900, Mitigation.COMBINED):
        changes["aifs_us"] = aifs_us
    if m in (Mitigation.REDUCED_SENSITIVITY, Mitigation.COMBINED):
        changes["cca_dbm"] = reduced_cca_dbm
    return dataclasses.replace(cfg, **changes)


class WifiBss:
    """One AP with saturated downlink to its clients; clients only send ACKs."""

    def __init__(self, engine: Engine, medium: Medium, rngs: RngFactory, cfg: WifiConfig,
                 ap: int, clients: list[int], per: PerTable,
                 ack_override: Callable[[int], bool] | None = None):
        self.engine = engine
        self.medium = medium
        self.cfg = cfg
        self.ap = ap
        self.clients = list(clients)
        self.per = per
        self.channel = cfg.channel_def
        self.span = Span.of(self.channel)
        self.noise_mw = medium.noise_mw(cfg.bandwidth_mhz)
        self.station = CsmaStation(engine, ap, cfg.edca(), rngs.stream(ap, "wifi-backoff"), self._on_access)
        self.rng = rngs.stream(ap, "wifi-rx")
        self.ack_override = ack_override
        self._next_client = 0
        self._retries = 0
        self.hold_ns: list[int] = []
        self.cw_trace: list[int] = []
        self.failures = 0
        self.successes = 0
        self.group: CcaGroup | None = None

    def start(self) -> None:
        self.group = self.medium.add_group(CcaGroup(np.array([self.ap]), self.cfg.cca_dbm, self.channel,
                                                    self._cca))
        self.station.busy = bool(self.group.busy[0])
        self.station.request()

    def _cca(self, idx, busy: bool, t: int) -> None:
        if busy:
            self.station.medium_busy(t)
        else:
            self.station.medium_idle(t)

    @property
    def accesses(self) -> int:
        return self.station.accesses

    def _on_access(self, st: CsmaStation) -> None:
        now = self.engine.now
        client = self.clients[self._next_client % len(self.clients)]
        dur = self.cfg.access_airtime_ns()
        rec = TxRecord(self.medium.new_id(), self.ap, "wifi", self.channel, self.span,
                       self.cfg.tx_power_dbm, now, now + dur)
        rec.meta["client"] = client
        self.hold_ns.append(dur)
        self.cw_trace.append(st.cw)
        self.medium.begin(rec)
        self.engine.schedule(rec.end, self._data_end, rec, target=self.ap, kind="wifi-data-end")

    def _decoded(self, rec: TxRecord, rx: int, mcs: str) -> bool:
        curve = self.per.get("wifi", mcs)
        sinr = float(self.medium.frame_sinr_db(rec, rx, self.span, self.channel, self.noise_mw,
                                               curve.error_free_db)[0])
        return bool(self.rng.random() >= curve(sinr))

    def _data_end(self, rec: TxRecord) -> None:
        self.medium.finish(rec)
        client = rec.meta["client"]
        ok = self._decoded(rec, client, self.cfg.data_mcs)
        sifs = int(round(self.cfg.sifs_us * US))
        ack = self.cfg.ack_airtime_ns()
        if ok:
            t = self.engine.now + sifs
            self.engine.schedule(t, self._send_ack, client, target=client, kind="wifi-ack")
        else:
            timeout = sifs + ack + int(round(self.cfg.slot_us * US))
            self.engine.schedule(self.engine.now + timeout, self._exchange_done, False,
                                 target=self.ap, kind="wifi-ack-timeout")

    def _send_ack(self, client: int) -> None:
        now = self.engine.now
        rec = TxRecord(self.medium.new_id(), client, "wifi", self.channel, self.span,
                       self.cfg.tx_power_dbm, now, now + self.cfg.ack_airtime_ns())
        self.medium.begin(rec)
        self.engine.schedule(rec.end, self._ack_end, rec, target=client, kind="wifi-ack-end")

    def _ack_end(self, rec: TxRecord) -> None:
        self.medium.finish(rec)
        self._exchange_done(self._decoded(rec, self.ap, self.cfg.ack_mcs))

    def _exchange_done(self, acked: bool) -> None:
        n = self.station.accesses
        if self.ack_override is not None:
            acked = self.ack_override(n)
        if acked:
            self.successes += 1
            self._retries = 0
            self._next_client += 1
        else:
            self.failures += 1
            self._retries += 1
            if self._retries > self.cfg.retry_limit:
                self._retries = 0
                self._next_client += 1
                acked = True        # frame discarded; the window resets as after success
        self.station.done(success=acked, more=True)


def place_clients(ap_xy: tuple[float, float], n: int, distance_m: float) -> list[tuple[float, float]]:
    """Clients evenly spaced on a circle around the AP."""
    out = []
    for k in range(n):
        a = 2 * math.pi * k / n
        out.append((ap_xy[0] + distance_m * math.cos(a), ap_xy[1] + distance_m * math.sin(a)))
    return out
