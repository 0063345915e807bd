"""Run configuration: a YAML key tree validated into typed sections."""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .core import ConfigError
from .traffic import CommType, TrafficProfile


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FixedNodeCfg(_Section):
    role: str = "probe"
    x: float
    y: float
    name: str = ""


class ScenarioCfg(_Section):
    kind: Literal["HighwayFast", "UrbanFast"] = "HighwayFast"
    road_length_m: float = Field(2000.0, ge=0)
    lane_count: int = Field(6, ge=1)
    vue_density_per_km: float = Field(120.0, ge=0)
    speed_kmh: Optional[Union[float, list[float]]] = None
    lane_width_m: float = Field(4.0, gt=0)
    block_size_m: float = Field(250.0, gt=0)
    fixed_nodes: list[FixedNodeCfg] = Field(default_factory=list)


class RadioCfg(_Section):
    fc_ghz: float = Field(5.9, gt=0)
    noise_figure_db: float = 9.0
    nlos_excess_db: float = 20.0
    shadowing_sigma_db: float = Field(0.0, ge=0)
    sinr_averaging: Literal["energy", "capacity", "capped"] = "capped"
    acir: dict[float, float] = Field(default_factory=lambda: {0.0: 0.0, 10.0: 25.0, 20.0: 40.0})
    per_csv: Optional[str] = None
    per_span_db: float = Field(4.0, gt=0)
    thresholds_db: dict[str, float] = Field(default_factory=dict)


class MetricsCfg(_Section):
    bin_m: float = Field(20.0, gt=0)
    max_range_m: float = Field(600.0, gt=0)
    probe: Optional[str] = None          # PDR table for one tagged receiver
    record_all: bool = True              # False: only probe receivers are scored
    trace: bool = False


class TrafficCfg(_Section):
    kind: Literal["periodic", "aperiodic", "saturated"] = "periodic"
    rate_hz: float = 10.0
    size_bytes: int = 300
    base_ms: float = 50.0
    exp_mean_ms: float = 50.0
    size_range: tuple[int, int] = (300, 12000)
    priority: int = 0
    comm_type: Literal["Broadcast", "Unicast", "Groupcast"] = "Broadcast"
    latency_budget_ms: float = 100.0
    group_size: int = Field(3, ge=1)     # receivers of a groupcast

    def profile(self) -> TrafficProfile:
        d = self.model_dump(exclude={"group_size"})
        d["comm_type"] = CommType(d["comm_type"])
        d["size_range"] = tuple(d["size_range"])
        return TrafficProfile(**d)


class NodeClassCfg(_Section):
    name: str
    rat: Literal["11p", "11bd", "cv2x", "nr", "dual"]
    count: Optional[int] = Field(None, ge=0)       # None: every remaining vehicle
    traffic: TrafficCfg = Field(default_factory=TrafficCfg)
    pinned: Optional[list[tuple[int, int]]] = None  # forced SPS resources (slot offset, subchannel)


class DsrcCfg(_Section):
    channel: int = 178
    cca_dbm: float = -85.0
    queue_depth: int = Field(2, ge=1)
    power_dbm: float = 23.0
    mcs: str = "QPSK-1/2"
    mcs_ngv: str = "QPSK-1/2"
    aifsn: int = Field(2, ge=0)
    cw: int = Field(15, ge=0)
    cw_max: Optional[int] = None
    retransmissions: bool = True
    retx_mode: Literal["Burst", "PerEdca"] = "Burst"
    fixed_k: Optional[int] = Field(None, ge=1, le=3)
    dcm: bool = False
    midambles: bool = True
    legacy_format: Literal["Legacy11p", "InteropAppend", "ParityAppend"] = "Legacy11p"
    native_format: Literal["NgvOnly", "InteropAppend", "ParityAppend", "Legacy11p"] = "NgvOnly"
    p11_copy_gain: bool = False


class SelectionCfg(_Section):
    t1_slots: int = Field(4, ge=1)
    rsrp_threshold_dbm: float = -110.0
    rsrp_step_db: float = Field(3.0, gt=0)
    rsrp_max_dbm: float = -50.0
    min_fraction: float = Field(0.2, gt=0, le=1)
    averaging: bool = True


class Cv2xCfg(_Section):
    channel: int = 178
    n_subch: int = Field(2, ge=1)
    subch_rb: int = Field(25, ge=1)
    mcs: str = "QPSK-1/2"
    power_dbm: float = 23.0
    sensing_window_ms: float = Field(1000.0, gt=0)
    rri_ms: float = Field(100.0, gt=0)
    rri_set_ms: list[float] = Field(default_factory=list)
    selection: Literal["sensing", "random"] = "sensing"
    keep_probability: float = Field(0.0, ge=0, le=0.8)
    blind_retx: bool = False
    collision_range_m: float = 300.0
    sel: SelectionCfg = Field(default_factory=SelectionCfg)


class HarqCfg(_Section):
    enabled: bool = True
    max_tx: int = Field(3, ge=1)
    gain_per_copy_db: float = 3.0
    gain_cap_db: float = 8.0
    psfch_period: int = Field(1, ge=1)
    psfch_gap_slots: int = Field(2, ge=0)


class PreemptionCfg(_Section):
    enabled: bool = False
    urgent_priority: int = 5
    pool: Literal["dedicated", "shared"] = "dedicated"


class Mode2dCfg(_Section):
    groups: int = Field(0, ge=0)
    group_size: int = Field(4, ge=1)
    pool_subch: list[int] = Field(default_factory=lambda: [0])
    period_ms: float = Field(20.0, gt=0)
    disjoint_pools: bool = True


class NrCfg(_Section):
    channel: int = 182
    mu: Literal[0, 1, 2] = 0
    subch_prb: int = Field(10, ge=1)
    high_speed: bool = True
    mcs: str = "QPSK-1/2"
    power_dbm: float = 23.0
    max_slots: int = Field(4, ge=1)
    access: Literal["long", "short", "combined"] = "long"
    lbt_threshold_dbm: float = -85.0
    lbt_gap_symbols: int = Field(2, ge=0, le=13)
    sensing_window_ms: Optional[float] = None      # None: derived from vehicle speed
    rri_ms: float = Field(100.0, gt=0)
    rri_set_ms: list[float] = Field(default_factory=list)
    selection: Literal["sensing", "random"] = "sensing"
    blind_retx: bool = False
    collision_range_m: float = 300.0
    sel: SelectionCfg = Field(default_factory=SelectionCfg)
    harq: Optional[HarqCfg] = None
    preemption: PreemptionCfg = Field(default_factory=PreemptionCfg)
    mode2d: Mode2dCfg = Field(default_factory=Mode2dCfg)


class WifiCfg(_Section):
    enabled: bool = False
    mitigation: Literal["NoCoex", "DisableAggregation", "Aifs900", "ReducedSensitivity", "Combined"] = "NoCoex"
    channel: int = 177
    bandwidth_mhz: float = 20.0
    tx_power_dbm: float = 23.0
    clients: int = Field(10, ge=1)
    phy_rate_mbps: float = Field(24.0, gt=0)
    mpdu_bytes: int = Field(1500, ge=1)
    ampdu_cap_ms: float = Field(4.0, gt=0)
    aifs_us: float = 34.0
    cca_dbm: float = -80.0
    reduced_cca_dbm: float = -82.0
    mitigation_aifs_us: float = 900.0
    client_distance_m: float = Field(10.0, gt=0)
    ap_x: Optional[float] = None
    ap_y: Optional[float] = None
    near_probe: Optional[str] = None               # place the AP next to this probe
    distance_to_probe_m: float = 5.0


class DualRatCfg(_Section):
    kind: Literal["TDM", "FDM"] = "TDM"
    period_ms: float = Field(20.0, gt=0)
    cv2x_share: float = 0.5
    total_power_dbm: float = 23.0
    split_db: tuple[float, float] = (-3.0, -3.0)


class RunConfig(_Section):
    name: str = "run"
    duration_s: float = Field(gt=0)
    warmup_s: float = Field(0.0, ge=0)
    seeds: list[int] = Field(min_length=1)
    output_dir: str = "results"
    scenario: ScenarioCfg = Field(default_factory=ScenarioCfg)
    radio: RadioCfg = Field(default_factory=RadioCfg)
    metrics: MetricsCfg = Field(default_factory=MetricsCfg)
    node_classes: list[NodeClassCfg] = Field(min_length=1)
    dsrc: DsrcCfg = Field(default_factory=DsrcCfg)
    cv2x: Cv2xCfg = Field(default_factory=Cv2xCfg)
    nr: NrCfg = Field(default_factory=NrCfg)
    wifi: WifiCfg = Field(default_factory=WifiCfg)
    dual_rat: DualRatCfg = Field(default_factory=DualRatCfg)

    @field_validator("seeds")
    @classmethod
    def _seeds_ok(cls, v: list[int]) -> list[int]:
        if any(s < 0 for s in v):
            raise ValueError("seeds must be non-negative")
        if len(set(v)) != len(v):
            raise ValueError("seeds must be distinct")
        return v

    @model_validator(mode="after")
    def _cross_checks(self) -> "RunConfig":
        names = [c.name for c in self.node_classes]
        if len(set(names)) != len(names):
            raise ValueError("node class names must be unique")
        probes = {f.name for f in self.scenario.fixed_nodes if f.role == "probe"}
        if self.metrics.probe is not None and self.metrics.probe not in probes:
            raise ValueError(f"metrics.probe {self.metrics.probe!r} is not a fixed node with role 'probe'")
        if not self.metrics.record_all and not probes:
            raise ValueError("metrics.record_all=false needs at least one probe")
        if self.wifi.enabled and self.wifi.near_probe is None and (self.wifi.ap_x is None or self.wifi.ap_y is None):
            raise ValueError("wifi needs ap_x/ap_y or near_probe")
        if self.wifi.near_probe is not None and self.wifi.near_probe not in probes:
            raise ValueError(f"wifi.near_probe {self.wifi.near_probe!r} is not a probe")
        if self.warmup_s >= self.duration_s:
            raise ValueError("warmup_s must be shorter than duration_s")
        return self


def _format_errors(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        parts.append(f"{path}: {e['msg']}")
    return "; ".join(parts)


def parse(data: Any) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>: config must be a mapping")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_errors(err)) from None


def load(path: str | Path) -> RunConfig:
    return parse(load_raw(path))


def load_raw(path: str | Path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: invalid YAML: {err}") from None
    return data if data is not None else {}


def set_path(data: dict, path: str, value: Any) -> dict:
    """Copy of `data` with the dotted key path set (list indices allowed)."""
    out = copy.deepcopy(data)
    keys = path.split(".")
    cur: Any = out
    for k in keys[:-1]:
        if isinstance(cur, list):
            cur = cur[int(k)]
            continue
        if k not in cur or cur[k] is None:
            cur[k] = {}
        cur = cur[k]
    last = keys[-1]
    if isinstance(cur, list):
        cur[int(last)] = value
    else:
        cur[last] = value
    return out


def resolved(cfg: RunConfig) -> dict:
    """Fully expanded config (defaults included) for embedding in results."""
    return cfg.model_dump(mode="json")
