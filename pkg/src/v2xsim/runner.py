"""Build a replication from a RunConfig, run it, aggregate seeds, write results."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from . import metrics as M
from .config import RunConfig, resolved
from .core import MS, S, Engine, RngFactory
from .csma import CsmaConfig, CsmaNetwork
from .cv2x import ResourceGrid, SelectionParams
from .dsrc import EdcaParams
from .medium import Medium, RadioParams
from .ngv import FrameFormat, NgvParams, RetxMode, RxClass
from .nrv2x import DualRatPolicy, HarqParams, Numerology, Radio, nr_grid, sensing_window_ms
from .radio import AcirTable, ChannelDef, PerTable
from .scenario import FixedNode, NodeSet, Scenario, build
from .sidelink import Mode2dParams, PreemptionParams, SidelinkConfig, SidelinkSystem
from .traffic import PacketFactory, TrafficSource
from .wifi import Mitigation, WifiBss, WifiConfig, apply_mitigation, place_clients

log = logging.getLogger(__name__)


@dataclass
class Replication:
    seed: int
    results: M.ResultSet
    nodes: NodeSet
    medium: Medium
    systems: dict[str, Any] = field(default_factory=dict)
    classes: dict[str, list[int]] = field(default_factory=dict)
    extras: dict[str, Any] = field(default_factory=dict)


def _fixed_nodes(cfg: RunConfig) -> list[FixedNode]:
    out = [FixedNode(f.role, f.x, f.y, f.name) for f in cfg.scenario.fixed_nodes]
    w = cfg.wifi
    if not w.enabled:
        return out
    if w.near_probe is not None:
        p = next(f for f in cfg.scenario.fixed_nodes if f.name == w.near_probe)
        ap = (p.x + w.distance_to_probe_m, p.y)
    else:
        ap = (w.ap_x, w.ap_y)
    out.append(FixedNode("wifi-ap", ap[0], ap[1], "ap"))
    for k, (x, y) in enumerate(place_clients(ap, w.clients, w.client_distance_m)):
        out.append(FixedNode("wifi-client", x, y, f"client{k}"))
    return out


def _selection(sel_cfg) -> SelectionParams:
    return SelectionParams(t1_slots=sel_cfg.t1_slots, rsrp_threshold_dbm=sel_cfg.rsrp_threshold_dbm,
                           rsrp_step_db=sel_cfg.rsrp_step_db, rsrp_max_dbm=sel_cfg.rsrp_max_dbm,
                           min_fraction=sel_cfg.min_fraction, averaging=sel_cfg.averaging)


def cv2x_config(cfg: RunConfig) -> SidelinkConfig:
    c = cfg.cv2x
    return SidelinkConfig(rat="cv2x", grid=ResourceGrid(n_subch=c.n_subch, subch_rb=c.subch_rb),
                          sel=_selection(c.sel), power_dbm=c.power_dbm, mcs=c.mcs,
                          sensing_window_ms=c.sensing_window_ms, rri_ms=c.rri_ms,
                          rri_set_ms=tuple(c.rri_set_ms), keep_probability=c.keep_probability,
                          selection=c.selection, blind_retx=c.blind_retx,
                          collision_range_m=c.collision_range_m, warmup_ns=int(cfg.warmup_s * S))


def nr_config(cfg: RunConfig, groups: tuple = ()) -> SidelinkConfig:
    c = cfg.nr
    num = Numerology(c.mu)
    window = c.sensing_window_ms
    if window is None:
        speeds = Scenario(cfg.scenario.kind, lane_count=cfg.scenario.lane_count,
                          speed_mps=_speed_mps(cfg)).lane_speeds()
        window = sensing_window_ms(float(np.mean(speeds)))
    harq = None
    if c.harq is not None:
        harq = HarqParams(**c.harq.model_dump())
    mode2d = None
    if groups:
        mode2d = Mode2dParams(groups=groups, pool_subch=tuple(c.mode2d.pool_subch),
                              period_slots=max(1, int(round(c.mode2d.period_ms * MS / num.slot_ns))),
                              disjoint_pools=c.mode2d.disjoint_pools)
    return SidelinkConfig(rat="nr", grid=nr_grid(c.mu, c.subch_prb, c.high_speed), sel=_selection(c.sel),
                          power_dbm=c.power_dbm, mcs=c.mcs, sensing_window_ms=window, rri_ms=c.rri_ms,
                          rri_set_ms=tuple(c.rri_set_ms), selection=c.selection, blind_retx=c.blind_retx,
                          max_slots=c.max_slots, access=c.access, lbt_threshold_dbm=c.lbt_threshold_dbm,
                          lbt_gap_symbols=c.lbt_gap_symbols, collision_range_m=c.collision_range_m,
                          harq=harq, preemption=PreemptionParams(**c.preemption.model_dump()),
                          mode2d=mode2d, warmup_ns=int(cfg.warmup_s * S))


def csma_config(cfg: RunConfig) -> CsmaConfig:
    d = cfg.dsrc
    return CsmaConfig(edca=EdcaParams(aifsn=d.aifsn, cw=d.cw, cw_max=d.cw_max), cca_dbm=d.cca_dbm,
                      queue_depth=d.queue_depth, power_dbm=d.power_dbm, mcs=d.mcs, mcs_ngv=d.mcs_ngv,
                      ngv=NgvParams(midambles=d.midambles), legacy_format=FrameFormat(d.legacy_format),
                      native_format=FrameFormat(d.native_format), retransmissions=d.retransmissions,
                      retx_mode=RetxMode(d.retx_mode), fixed_k=d.fixed_k, dcm=d.dcm,
                      p11_copy_gain=d.p11_copy_gain)


def wifi_config(cfg: RunConfig) -> WifiConfig:
    w = cfg.wifi
    base = WifiConfig(channel=w.channel, bandwidth_mhz=w.bandwidth_mhz, tx_power_dbm=w.tx_power_dbm,
                      clients=w.clients, phy_rate_mbps=w.phy_rate_mbps, mpdu_bytes=w.mpdu_bytes,
                      ampdu_cap_ms=w.ampdu_cap_ms, aifs_us=w.aifs_us, cca_dbm=w.cca_dbm,
                      client_distance_m=w.client_distance_m)
    return apply_mitigation(base, Mitigation(w.mitigation), w.reduced_cca_dbm, w.mitigation_aifs_us)


def _speed_mps(cfg: RunConfig):
    v = cfg.scenario.speed_kmh
    if v is None:
        return None
    if isinstance(v, list):
        return [x / 3.6 for x in v]
    return v / 3.6


def per_table(cfg: RunConfig) -> PerTable:
    r = cfg.radio
    if r.per_csv:
        return PerTable.from_csv(r.per_csv, thresholds=r.thresholds_db, span_db=r.per_span_db)
    return PerTable(thresholds=r.thresholds_db, span_db=r.per_span_db)


def _assign(cfg: RunConfig, vehicles: np.ndarray, rng: np.random.Generator) -> dict[str, list[int]]:
    order = vehicles[rng.permutation(len(vehicles))]
    out: dict[str, list[int]] = {}
    i = 0
    for c in cfg.node_classes:
        n = len(order) - i if c.count is None else min(c.count, len(order) - i)
        out[c.name] = sorted(int(v) for v in order[i:i + n])
        i += n
    return out


def _destinations(nodes: NodeSet, members: list[int], k: int) -> dict[int, tuple[int, ...]]:
    arr = np.array(members, dtype=int)
    out = {}
    for m in members:
        d = nodes.distances_from(m, 0)[arr]
        d = np.where(arr == m, np.inf, d)
        near = arr[np.argsort(d, kind="stable")[:k]]
        out[m] = tuple(int(x) for x in near if x != m)
    return out


def simulate(cfg: RunConfig, seed: int, trace: io.TextIOBase | None = None,
             keep_log: bool = False) -> Replication:
    rngs = RngFactory(seed)
    sc = Scenario(cfg.scenario.kind, cfg.scenario.road_length_m, cfg.scenario.lane_count,
                  cfg.scenario.vue_density_per_km, _speed_mps(cfg), cfg.scenario.lane_width_m,
                  cfg.scenario.block_size_m, _fixed_nodes(cfg))
    nodes = build(sc, rngs.stream(-1, "layout"))
    engine = Engine(trace)
    params = RadioParams(fc_ghz=cfg.radio.fc_ghz, noise_figure_db=cfg.radio.noise_figure_db,
                         nlos_excess_db=cfg.radio.nlos_excess_db,
                         shadowing_sigma_db=cfg.radio.shadowing_sigma_db,
                         sinr_averaging=cfg.radio.sinr_averaging, acir=AcirTable(dict(cfg.radio.acir)))
    medium = Medium(engine, nodes, params, rngs.stream(-1, "shadowing"))
    per = per_table(cfg)
    results = M.ResultSet(seed, cfg.metrics.bin_m, cfg.metrics.max_range_m)
    probes = {nodes.names[i]: int(i) for i in nodes.indices("probe")}
    rep = Replication(seed, results, nodes, medium)
    rep.classes = _assign(cfg, nodes.indices("vehicle"), rngs.stream(-1, "classes"))
    by_class = {c.name: c for c in cfg.node_classes}
    rats = {c.rat for c in cfg.node_classes if rep.classes[c.name]}
    factory = PacketFactory()
    record_all = cfg.metrics.record_all
    if keep_log or "dual" in rats or cfg.metrics.trace:
        medium.log = []
    sources: list[TrafficSource] = []

    dual_nodes = [n for c in cfg.node_classes if c.rat == "dual" for n in rep.classes[c.name]]
    policy = None
    if dual_nodes:
        d = cfg.dual_rat
        policy = DualRatPolicy(d.kind, d.period_ms, d.cv2x_share, d.total_power_dbm, tuple(d.split_db))

    if rats & {"11p", "11bd"}:
        net = CsmaNetwork(engine, medium, rngs, ChannelDef.its(cfg.dsrc.channel), csma_config(cfg), per,
                          results, factory, probes, record_all)
        for c in cfg.node_classes:
            if c.rat not in ("11p", "11bd"):
                continue
            prof = c.traffic.profile()
            for n in rep.classes[c.name]:
                net.add_node(n, RxClass(c.rat), prof)
                sources.append(TrafficSource(engine, n, prof, rngs.stream(n, "traffic"), factory, net.on_packet))
        net.start()
        rep.systems["csma"] = net

    def sidelink(rat: str, sl_cfg: SidelinkConfig, channel: int, radio: Radio) -> SidelinkSystem:
        sys_ = SidelinkSystem(engine, medium, rngs, ChannelDef.its(channel), sl_cfg, per, results, probes,
                              record_all, gate=policy, radio=radio, dual_nodes=dual_nodes)
        for c in cfg.node_classes:
            if c.rat not in (rat, "dual"):
                continue
            prof = c.traffic.profile()
            members = rep.classes[c.name]
            dests = {}
            if prof.comm_type.value != "Broadcast":
                k = 1 if prof.comm_type.value == "Unicast" else c.traffic.group_size
                dests = _destinations(nodes, members, k)
            for j, n in enumerate(members):
                pin = tuple(c.pinned[j % len(c.pinned)]) if c.pinned else None
                sys_.add_ue(n, prof, pinned=pin)
                sources.append(TrafficSource(engine, n, prof, rngs.stream(n, f"traffic-{rat}"), factory,
                                             sys_.on_packet, dests.get(n, ())))
        return sys_

    if rats & {"cv2x", "dual"}:
        sl = sidelink("cv2x", cv2x_config(cfg), cfg.cv2x.channel, Radio.CV2X)
        sl.start()
        rep.systems["cv2x"] = sl
    if rats & {"nr", "dual"}:
        groups: list[tuple[int, ...]] = []
        m2d = cfg.nr.mode2d
        if m2d.groups:
            nr_only = [n for c in cfg.node_classes if c.rat == "nr" for n in rep.classes[c.name]]
            nr_only.sort(key=lambda n: (nodes.x0[n], nodes.y0[n], n))
            for g in range(m2d.groups):
                chunk = nr_only[g * m2d.group_size:(g + 1) * m2d.group_size]
                if chunk:
                    groups.append(tuple(chunk))
        sl = sidelink("nr", nr_config(cfg, tuple(groups)), cfg.nr.channel, Radio.NRV2X)
        sl.start()
        rep.systems["nr"] = sl

    if cfg.wifi.enabled:
        ap = nodes.index_of("ap")
        clients = [int(i) for i in nodes.indices("wifi-client")]
        bss = WifiBss(engine, medium, rngs, wifi_config(cfg), ap, clients, per)
        bss.start()
        rep.systems["wifi"] = bss

    for src in sources:
        src.start()
    end = int(round(cfg.duration_s * S))
    engine.run_until(end)
    for name in ("csma", "cv2x", "nr"):
        if name in rep.systems:
            rep.systems[name].flush()
    rep.extras = _extras(rep, end)
    return rep


def _extras(rep: Replication, end: int) -> dict[str, Any]:
    res = rep.results
    ex: dict[str, Any] = {
        "conservation_ok": res.conservation_ok(),
        "loss_taxonomy": res.loss_taxonomy(),
        "counters": dict(sorted(res.counters.items())),
        "events": rep.medium.engine.dispatched,
    }
    lat = res.access_latency_ms
    ex["access_latency_ms_mean"] = float(np.mean(lat)) if lat else None
    ex["access_latency_ms_max"] = float(np.max(lat)) if lat else None
    ex["cbr_mean"] = float(np.mean([c for _, c in res.cbr_series])) if res.cbr_series else None
    tx = res.counters.get("sr_tx", 0)
    ex["same_resource_collision_rate"] = res.counters.get("sr_collided", 0) / tx if tx else None
    wifi = rep.systems.get("wifi")
    if wifi is not None:
        ex["wifi_accesses_per_s"] = wifi.accesses / (end / S)
    net = rep.systems.get("csma")
    if net is not None:
        counts = net.access_counts()
        for cls in ("11p", "11bd"):
            vals = [counts[n] for n, nd in net.nodes.items() if nd.rx_class.value == cls]
            ex[f"access_count_mean_{cls}"] = float(np.mean(vals)) if vals else None
    return ex


# ---------------------------------------------------------------------------
# Aggregation and output


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def pdr_csv(rows: list[M.PdrRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_m", "pdr", "ci95", "opportunities"])
    for r in rows:
        w.writerow([f"{r.bin_lo:g}", _fmt(r.pdr), _fmt(r.ci95), r.opportunities])
    return buf.getvalue()


def _clean(x: Any) -> Any:
    if isinstance(x, float):
        return None if math.isnan(x) or math.isinf(x) else round(x, 9)
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return _clean(float(x))
    return x


def summarize(cfg: RunConfig, reps: list[Replication]) -> dict[str, Any]:
    results = [r.results for r in reps]
    probe = cfg.metrics.probe
    rows = M.pdr_vs_distance(results, probe)
    lat = [r.extras["access_latency_ms_mean"] for r in reps]
    taxonomy: dict[str, int] = {}
    for r in reps:
        for k, v in r.extras["loss_taxonomy"].items():
            taxonomy[k] = taxonomy.get(k, 0) + v
    mean_lat, ci_lat = M.mean_ci([x for x in lat if x is not None])
    return _clean({
        "version": __version__,
        "config": resolved(cfg),
        "seeds": [r.seed for r in reps],
        "pdr_probe": probe,
        "pdr_100m": M.pdr_at(rows, 100.0).pdr if cfg.metrics.max_range_m > 100 else None,
        "range_90pct_m": M.range_at_pdr(rows, 0.9),
        "access_latency_ms": {"mean": mean_lat, "ci95": ci_lat},
        "loss_taxonomy": taxonomy,
        "replications": [{"seed": r.seed, **r.extras} for r in reps],
    })


def run_config(cfg: RunConfig, out_dir: str | Path | None = None) -> tuple[list[Replication], Path]:
    out = Path(out_dir or os.environ.get("V2XSIM_OUTPUT_DIR") or cfg.output_dir)
    reps = []
    for seed in cfg.seeds:
        log.info("seed %d", seed)
        reps.append(simulate(cfg, seed))
    write_outputs(cfg, reps, out)
    return reps, out


def write_outputs(cfg: RunConfig, reps: list[Replication], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    results = [r.results for r in reps]
    (out / "pdr.csv").write_text(pdr_csv(M.pdr_vs_distance(results, cfg.metrics.probe)))
    probes = sorted({p for r in results for p in r.probe_counts})
    for p in probes:
        (out / f"pdr_{p}.csv").write_text(pdr_csv(M.pdr_vs_distance(results, p)))
    (out / "summary.json").write_text(json.dumps(summarize(cfg, reps), indent=2, sort_keys=True) + "\n")


def read_pdr(path: str | Path) -> list[M.PdrRow]:
    rows = []
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        bins = list(r)
    width = float(bins[1]["bin_m"]) - float(bins[0]["bin_m"]) if len(bins) > 1 else 20.0
    for b in bins:
        lo = float(b["bin_m"])
        rows.append(M.PdrRow(lo, lo + width, float(b["pdr"]) if b["pdr"] else None,
                             float(b["ci95"]) if b["ci95"] else None, int(b["opportunities"])))
    return rows
