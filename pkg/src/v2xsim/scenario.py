"""Node layouts for highway and urban grids, constant-velocity mobility, geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import S, ConfigError


class ScenarioKind(str, Enum):
    HIGHWAY_FAST = "HighwayFast"
    URBAN_FAST = "UrbanFast"


@dataclass(frozen=True)
class FixedNode:
    role: str
    x: float
    y: float
    name: str = ""


@dataclass
class Scenario:
    kind: ScenarioKind = ScenarioKind.HIGHWAY_FAST
    road_length_m: float = 2000.0
    lane_count: int = 6
    vue_density_per_km: float = 120.0
    speed_mps: float | list[float] | None = None   # scalar or one value per lane
    lane_width_m: float = 4.0
    block_size_m: float = 250.0
    fixed_nodes: list[FixedNode] = field(default_factory=list)

    def __post_init__(self):
        self.kind = ScenarioKind(self.kind)
        if self.road_length_m < 0 or self.vue_density_per_km < 0:
            raise ConfigError("road length and density must be non-negative")
        if self.lane_count < 1:
            raise ConfigError("lane_count must be >= 1")
        if self.block_size_m <= 0:
            raise ConfigError("block_size_m must be positive")

    def lane_speeds(self) -> list[float]:
        default = 140 / 3.6 if self.kind is ScenarioKind.HIGHWAY_FAST else 60 / 3.6
        v = default if self.speed_mps is None else self.speed_mps
        if isinstance(v, (int, float)):
            return [float(v)] * self.lane_count
        if len(v) != self.lane_count:
            raise ConfigError(f"speed list has {len(v)} entries for {self.lane_count} lanes")
        return [float(s) for s in v]


class NodeSet:
    """Vehicles and fixed nodes; positions are pure functions of time."""

    def __init__(self, x0, y0, vx, vy, roles, names, period_x, period_y,
                 block_size=None, street_half_width=0.0):
        self.x0 = np.asarray(x0, dtype=float)
        self.y0 = np.asarray(y0, dtype=float)
        self.vx = np.asarray(vx, dtype=float)
        self.vy = np.asarray(vy, dtype=float)
        self.roles = list(roles)
        self.names = list(names)
        self.period_x = period_x
        self.period_y = period_y
        self.block_size = block_size
        self.street_half_width = street_half_width
        self._cache_t = None
        self._cache_xy = None
        self._dist_t = None
        self._dist: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.roles)

    def indices(self, role: str) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.roles) if r == role], dtype=int)

    def index_of(self, name: str) -> int:
        return self.names.index(name)

    @property
    def urban(self) -> bool:
        return self.block_size is not None

    def positions(self, t: int) -> np.ndarray:
        """(N, 2) array of positions at tick t."""
        if t == self._cache_t:
            return self._cache_xy
        ts = t / S
        x = self.x0 + self.vx * ts
        y = self.y0 + self.vy * ts
        moving_x = self.vx != 0
        moving_y = self.vy != 0
        if self.period_x:
            x = np.where(moving_x, np.mod(x, self.period_x), x)
        if self.period_y:
            y = np.where(moving_y, np.mod(y, self.period_y), y)
        xy = np.column_stack([x, y])
        self._cache_t, self._cache_xy = t, xy
        return xy

    def position_at(self, node: int, t: int) -> tuple[float, float]:
        p = self.positions(t)[node]
        return float(p[0]), float(p[1])

    def _delta(self, a_xy: np.ndarray, b_xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dx = b_xy[..., 0] - a_xy[..., 0]
        dy = b_xy[..., 1] - a_xy[..., 1]
        if self.period_x:
            dx = dx - self.period_x * np.round(dx / self.period_x)
        if self.period_y:
            dy = dy - self.period_y * np.round(dy / self.period_y)
        return dx, dy

    def distances_from(self, src: int | np.ndarray, t: int, clamp: bool = True) -> np.ndarray:
        """Distances from each node in `src` to all nodes; shape (len(src), N) or (N,)."""
        scalar = np.ndim(src) == 0
        if scalar and clamp:
            if t != self._dist_t:
                self._dist_t, self._dist = t, {}
            hit = self._dist.get(int(src))
            if hit is not None:
                return hit
        xy = self.positions(t)
        a = xy[src]
        if scalar:
            dx, dy = self._delta(a[None, :], xy)
            d = np.maximum(np.hypot(dx, dy), 1.0)
            if clamp:
                d.flags.writeable = False      # shared between callers at the same instant
                self._dist[int(src)] = d
                return d
            return np.hypot(dx, dy)
        dx, dy = self._delta(a[:, None, :], xy[None, :, :])
        d = np.hypot(dx, dy)
        return np.maximum(d, 1.0) if clamp else d

    def distance(self, a: int, b: int, t: int) -> float:
        return float(self.distances_from(a, t)[b])

    def nlos_from(self, src: int | np.ndarray, t: int) -> np.ndarray:
        """True where the straight segment crosses a building block (urban only)."""
        xy = self.positions(t)
        a = xy[np.atleast_1d(src)]
        shape = (len(a), len(self))
        if not self.urban:
            out = np.zeros(shape, dtype=bool)
        else:
            dx, dy = self._delta(a[:, None, :], xy[None, :, :])
            bs, hw = self.block_size, self.street_half_width
            # sample the segment; a sample is inside a block if it is off every street
            f = np.linspace(0.05, 0.95, 19)[None, :, None]
            px = np.mod(a[:, 0][:, None, None] + f * dx[:, None, :], bs)
            py = np.mod(a[:, 1][:, None, None] + f * dy[:, None, :], bs)
            on_street = (np.minimum(px, bs - px) <= hw) | (np.minimum(py, bs - py) <= hw)
            out = (~on_street).any(axis=1)
        return out[0] if np.ndim(src) == 0 else out


def build(scenario: Scenario, rng: np.random.Generator) -> NodeSet:
    """Place vehicles by a per-lane Poisson process, then append fixed nodes verbatim."""
    speeds = scenario.lane_speeds()
    L = float(scenario.road_length_m)
    per_lane = scenario.vue_density_per_km / scenario.lane_count
    x0, y0, vx, vy = [], [], [], []
    urban = scenario.kind is ScenarioKind.URBAN_FAST
    half = scenario.lane_count / 2.0
    lane_offsets = [(k - half + 0.5) * scenario.lane_width_m for k in range(scenario.lane_count)]
    # lanes below the centre line drive one way, above it the other
    lane_dirs = [1.0 if off >= 0 else -1.0 for off in lane_offsets]

    if L > 0 and per_lane > 0:
        if not urban:
            streets = [("h", 0.0)]
        else:
            n_streets = max(1, int(round(L / scenario.block_size_m)))
            streets = [("h", k * scenario.block_size_m) for k in range(n_streets)]
            streets += [("v", k * scenario.block_size_m) for k in range(n_streets)]
        for axis, c in streets:
            for lane, off in enumerate(lane_offsets):
                n = rng.poisson(per_lane * L / 1000.0)
                along = np.sort(rng.uniform(0.0, L, size=n))
                v = speeds[lane] * lane_dirs[lane]
                if axis == "h":
                    x0.extend(along); y0.extend([c + off] * n)
                    vx.extend([v] * n); vy.extend([0.0] * n)
                else:
                    x0.extend([c + off] * n); y0.extend(along)
                    vx.extend([0.0] * n); vy.extend([v] * n)
    if urban and L > 0:
        y0 = [float(np.mod(y, L)) for y in y0]
        x0 = [float(np.mod(x, L)) for x in x0]
    n_veh = len(x0)
    roles = ["vehicle"] * n_veh
    names = [f"v{i}" for i in range(n_veh)]
    for k, fn in enumerate(scenario.fixed_nodes):
        if not (math.isfinite(fn.x) and math.isfinite(fn.y)):
            raise ConfigError(f"fixed node {k} has non-finite coordinates")
        x0.append(fn.x); y0.append(fn.y); vx.append(0.0); vy.append(0.0)
        roles.append(fn.role)
        names.append(fn.name or f"{fn.role}{k}")
    period = L if L > 0 else None
    return NodeSet(
        x0, y0, vx, vy, roles, names,
        period_x=period,
        period_y=period if urban else None,
        block_size=scenario.block_size_m if urban else None,
        street_half_width=(scenario.lane_count / 2.0) * scenario.lane_width_m + 2.0,
    )
