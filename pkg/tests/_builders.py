"""Small hand-built scenarios shared by unit and acceptance tests."""

from __future__ import annotations

import numpy as np

from v2xsim import config as C
from v2xsim import metrics as M
from v2xsim.core import MS, Engine, RngFactory
from v2xsim.medium import Medium, RadioParams
from v2xsim.nrv2x import nr_grid
from v2xsim.radio import ChannelDef, PerTable
from v2xsim.scenario import NodeSet
from v2xsim.sidelink import PreemptionParams, SidelinkConfig, SidelinkSystem
from v2xsim.traffic import PacketFactory, TrafficProfile, TrafficSource

RRI_SLOTS = 10
URGENT_PRIORITY = 5
BUDGET_MS = 10.0


def preemption_trial(seed: int, enabled: bool, inject_ms: float = 250.0) -> bool:
    """Every (slot, subchannel) of a 10-slot period is pinned by a low-priority
    UE; one more UE then raises an urgent packet. True when it goes on air
    within the 10 ms budget."""
    grid = nr_grid(0, subch_prb=10)
    S = grid.n_subch
    n_bg = RRI_SLOTS * S
    rng = np.random.default_rng(seed)
    xs = np.concatenate([rng.uniform(0, 40, n_bg), [20.0]])
    ys = np.concatenate([rng.uniform(0, 12, n_bg), [6.0]])
    n = n_bg + 1
    nodes = NodeSet(xs, ys, np.zeros(n), np.zeros(n), ["vehicle"] * n, [f"v{i}" for i in range(n)],
                    period_x=None, period_y=None)
    engine = Engine()
    medium = Medium(engine, nodes, RadioParams())
    rngs = RngFactory(seed)
    results = M.ResultSet(seed, 20.0, 600.0)
    cfg = SidelinkConfig(rat="nr", grid=grid, sensing_window_ms=100.0, rri_ms=RRI_SLOTS * grid.slot_ns / MS,
                         preemption=PreemptionParams(enabled=enabled, urgent_priority=URGENT_PRIORITY))
    sl = SidelinkSystem(engine, medium, rngs, ChannelDef.its(182), cfg, PerTable(), results)
    factory = PacketFactory()
    bg = TrafficProfile(kind="periodic", rate_hz=1000.0 / (RRI_SLOTS * grid.slot_ns / MS), size_bytes=50)
    sources = []
    for i in range(n_bg):
        sl.add_ue(i, bg, pinned=(i % RRI_SLOTS, i // RRI_SLOTS))
        sources.append(TrafficSource(engine, i, bg, rngs.stream(i, "traffic"), factory, sl.on_packet))
    urgent_node = n_bg
    sl.add_ue(urgent_node, TrafficProfile(kind="aperiodic", size_bytes=50, priority=URGENT_PRIORITY,
                                          latency_budget_ms=BUDGET_MS))
    sl.start()
    for s in sources:
        s.start()
    # arrival phase inside the slot and the period varies with the seed
    t_inj = int(inject_ms * MS) + int(rng.integers(0, RRI_SLOTS * grid.slot_ns))
    urgent = TrafficProfile(kind="aperiodic", size_bytes=50, priority=URGENT_PRIORITY, latency_budget_ms=BUDGET_MS)
    box = {}

    def inject():
        pkt = factory.make(urgent_node, engine.now, 50, urgent)
        box["pkt"] = pkt
        sl.on_packet(pkt)

    engine.schedule(t_inj, inject, kind="urgent")
    engine.run_until(t_inj + int(3 * BUDGET_MS * MS))
    pkt = box["pkt"]
    sent = [s for s, node, *_ in sl.tx_log if node == urgent_node]
    return any((s + 1) * grid.slot_ns <= pkt.deadline for s in sent)


def nr_config(mu: int = 0, **over) -> C.RunConfig:
    """Highway NR sidelink run used by the numerology and mode 2(d) checks."""
    d = {
        "name": f"nr-mu{mu}", "duration_s": 2.0, "warmup_s": 0.5, "seeds": [1],
        "scenario": {"kind": "HighwayFast", "road_length_m": 1000, "vue_density_per_km": 40},
        "node_classes": [{"name": "nr", "rat": "nr",
                          "traffic": {"kind": "aperiodic", "size_bytes": 200, "base_ms": 50,
                                      "exp_mean_ms": 50, "size_range": [200, 200]}}],
        "nr": {"mu": mu, "sensing_window_ms": 200},
    }
    for k, v in over.items():
        d = C.set_path(d, k, v)
    return C.parse(d)


def dual_config(**over) -> C.RunConfig:
    d = {
        "name": "dual-tdm", "duration_s": 2.0, "warmup_s": 0.2, "seeds": [1],
        "scenario": {"kind": "HighwayFast", "road_length_m": 600, "vue_density_per_km": 30},
        "node_classes": [
            {"name": "dual", "rat": "dual", "count": 10,
             "traffic": {"kind": "periodic", "rate_hz": 10, "size_bytes": 200}},
            {"name": "lte", "rat": "cv2x", "traffic": {"kind": "periodic", "rate_hz": 10, "size_bytes": 300}},
        ],
        "cv2x": {"channel": 178},
        "nr": {"channel": 182, "mu": 1, "sensing_window_ms": 200},
        "dual_rat": {"kind": "TDM", "period_ms": 20, "cv2x_share": 0.5},
    }
    for k, v in over.items():
        d = C.set_path(d, k, v)
    return C.parse(d)


def tdm_boundary_latency(seed: int, period_ms: float = 20.0, share: float = 0.5) -> tuple[int, int]:
    """NR packet of a dual-radio node raised exactly when its TDM window closes.

    Returns (latency_ns from arrival to the start of its transmission, NR window length ns).
    """
    from v2xsim.nrv2x import DualRatPolicy, Radio

    policy = DualRatPolicy("TDM", period_ms, share)
    rng = np.random.default_rng(seed)
    n = 8
    nodes = NodeSet(rng.uniform(0, 300, n), rng.uniform(0, 12, n), np.zeros(n), np.zeros(n),
                    ["vehicle"] * n, [f"v{i}" for i in range(n)], period_x=None, period_y=None)
    engine = Engine()
    medium = Medium(engine, nodes, RadioParams())
    rngs = RngFactory(seed)
    results = M.ResultSet(seed, 20.0, 600.0)
    grid = nr_grid(1)
    cfg = SidelinkConfig(rat="nr", grid=grid, sensing_window_ms=100.0)
    sl = SidelinkSystem(engine, medium, rngs, ChannelDef.its(182), cfg, PerTable(), results,
                        gate=policy, radio=Radio.NRV2X, dual_nodes=[0])
    factory = PacketFactory()
    prof = TrafficProfile(kind="periodic", rate_hz=10, size_bytes=100)
    sources = []
    for i in range(n):
        sl.add_ue(i, prof)
        if i:
            sources.append(TrafficSource(engine, i, prof, rngs.stream(i, "traffic"), factory, sl.on_packet))
    sl.start()
    for s in sources:
        s.start()
    # the NR window is the tail of each period, so it closes on a period boundary
    k = int(rng.integers(10, 20))
    t_arr = k * policy.period_ns
    urgent = TrafficProfile(kind="aperiodic", size_bytes=100)
    box = {}

    def inject():
        pkt = factory.make(0, engine.now, 100, urgent)
        box["t"] = engine.now
        sl.on_packet(pkt)

    engine.schedule(t_arr, inject, kind="boundary")
    engine.run_until(t_arr + 150 * MS)
    starts = [s * grid.slot_ns for s, node, *_ in sl.tx_log if node == 0 and s * grid.slot_ns >= box["t"]]
    return min(starts) - box["t"], policy.window_length_ns(Radio.NRV2X)
