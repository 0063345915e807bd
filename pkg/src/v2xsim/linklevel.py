"""Single-link PER measurement through the full CSMA reception path.

One saturated transmitter and one receiver are placed at the distance that
yields the requested SNR; interference is absent, so every loss is a draw
against the PER curve after combining.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from . import metrics as M
from .core import MS, Engine, RngFactory
from .csma import CsmaConfig, CsmaNetwork
from .medium import Medium, RadioParams
from .ngv import CombiningGainTable, FrameFormat, RxClass
from .radio import ChannelDef, PerTable, noise_dbm, path_loss_db
from .scenario import NodeSet
from .traffic import PacketFactory, TrafficProfile


@dataclass
class LinkPoint:
    snr_db: float
    packets: int
    failures: int

    @property
    def per(self) -> float:
        return self.failures / self.packets if self.packets else float("nan")


def distance_for_snr(snr_db: float, power_dbm: float, bandwidth_mhz: float, params: RadioParams) -> float:
    """Distance at which the mean received SNR equals `snr_db` (LOS)."""
    target_pl = power_dbm - noise_dbm(bandwidth_mhz, params.noise_figure_db) - snr_db

    def f(d):
        return float(path_loss_db(d, params.fc_ghz, True, params.h_tx_m, params.h_rx_m)) - target_pl

    lo, hi = 1.0, 1e6
    if f(lo) >= 0:
        return lo
    return float(brentq(f, lo, hi, xtol=1e-9))


def measure(snr_db: float, rx_class: RxClass | str = RxClass.BD11, k: int = 1, packets: int = 2000,
            seed: int = 0, gains: CombiningGainTable | None = None, mcs: str = "QPSK-1/2",
            size_bytes: int = 300, per: PerTable | None = None,
            preamble_sinr_db: float = -30.0) -> LinkPoint:
    """PER of `packets` frames at a fixed SNR.

    Preamble detection is effectively switched off by default so that the
    decode decision alone is measured, also for gains that move the operating
    point below the usual detection threshold.
    """
    rx_class = RxClass(rx_class)
    params = RadioParams()
    ch = ChannelDef.its(178)
    d = distance_for_snr(snr_db, 23.0, ch.bandwidth_mhz, params)
    nodes = NodeSet([0.0, d], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], ["probe", "probe"], ["tx", "rx"],
                    period_x=None, period_y=None)
    engine = Engine()
    medium = Medium(engine, nodes, params)
    rngs = RngFactory(seed)
    results = M.ResultSet(seed, bin_m=1e6, max_range_m=1e6)
    cfg = CsmaConfig(mcs=mcs, mcs_ngv=mcs, fixed_k=k, gains=gains or CombiningGainTable(),
                     native_format=FrameFormat.LEGACY_11P, preamble_sinr_db=preamble_sinr_db)
    # 11bd transmitters carry the copies; the receiver class decides how they combine
    net = CsmaNetwork(engine, medium, rngs, ch, cfg, per or PerTable(), results, PacketFactory(),
                      probes={"rx": 1}, record_all=False)
    prof = TrafficProfile(kind="saturated", size_bytes=size_bytes)
    net.add_node(0, RxClass.BD11, prof)
    net.add_probe("rx", 1, rx_class)
    net.start()
    step = 10 * MS
    while results.opportunities("rx").sum() < packets:
        engine.run_until(engine.now + step)
    # packets still on air are left out rather than counted as failures
    counts = results.probe_counts["rx"]
    n = int(counts.sum())
    return LinkPoint(snr_db, n, n - int(counts[M.SUCCESS].sum()))


def sweep(snrs, seed: int = 0, **kw) -> list[LinkPoint]:
    return [measure(float(s), seed=seed + i, **kw) for i, s in enumerate(snrs)]


def snr_at_per(points: list[LinkPoint], target: float = 0.1) -> float:
    """Linear interpolation of the first downward crossing of `target`."""
    pts = sorted(points, key=lambda p: p.snr_db)
    for a, b in zip(pts, pts[1:]):
        if a.per >= target >= b.per and a.per != b.per:
            return a.snr_db + (a.per - target) / (a.per - b.per) * (b.snr_db - a.snr_db)
    raise ValueError(f"PER {target} not crossed by the sweep")


def with_gain(table: CombiningGainTable, k: int, gain_db: float) -> CombiningGainTable:
    """Table whose 11bd and 11p entries for k copies are set to `gain_db`."""
    return replace(table, retx_11bd={**table.retx_11bd, k: gain_db}, retx_11p={**table.retx_11p, k: gain_db})
