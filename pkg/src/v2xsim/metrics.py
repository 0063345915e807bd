"""Reception-opportunity accounting and cross-seed aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

OUTCOMES = ("success", "sinr-fail", "half-duplex", "collision", "queue-drop", "deadline-miss", "pi-loss")
SUCCESS, SINR_FAIL, HALF_DUPLEX, COLLISION, QUEUE_DROP, DEADLINE_MISS, PI_LOSS = range(len(OUTCOMES))


@dataclass
class ResultSet:
    """Everything one replication measured."""
    seed: int
    bin_m: float = 20.0
    max_range_m: float = 600.0
    counts: np.ndarray | None = None                      # (outcome, bin)
    probe_counts: dict[str, np.ndarray] = field(default_factory=dict)
    access_latency_ms: list[float] = field(default_factory=list)
    cbr_series: list[tuple[float, float]] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=dict)
    ledger: list[tuple] | None = None

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((len(OUTCOMES), self.n_bins), dtype=np.int64)

    @property
    def n_bins(self) -> int:
        return int(math.ceil(self.max_range_m / self.bin_m))

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.n_bins + 1) * self.bin_m

    def bump(self, key: str, n: int = 1) -> None:
        self.counters[key] = self.counters.get(key, 0) + int(n)

    def record(self, dist_m, outcome, probe: str | None = None) -> None:
        """Add reception opportunities; distances beyond the last bin are ignored."""
        d = np.atleast_1d(np.asarray(dist_m, dtype=float))
        o = np.broadcast_to(np.atleast_1d(np.asarray(outcome, dtype=np.int64)), d.shape)
        b = (d // self.bin_m).astype(np.int64)
        keep = (b >= 0) & (b < self.n_bins)
        if not keep.all():
            b, o = b[keep], o[keep]
        np.add.at(self.counts, (o, b), 1)
        if probe is not None:
            pc = self.probe_counts.get(probe)
            if pc is None:
                pc = self.probe_counts[probe] = np.zeros_like(self.counts)
            np.add.at(pc, (o, b), 1)

    def record_probe(self, probe: str, dist_m, outcome) -> None:
        """Add to one probe's table only (the totals are recorded separately)."""
        d = np.atleast_1d(np.asarray(dist_m, dtype=float))
        o = np.broadcast_to(np.atleast_1d(np.asarray(outcome, dtype=np.int64)), d.shape)
        b = (d // self.bin_m).astype(np.int64)
        keep = (b >= 0) & (b < self.n_bins)
        pc = self.probe_counts.get(probe)
        if pc is None:
            pc = self.probe_counts[probe] = np.zeros_like(self.counts)
        np.add.at(pc, (o[keep], b[keep]), 1)

    def opportunities(self, probe: str | None = None) -> np.ndarray:
        return self._table(probe).sum(axis=0)

    def successes(self, probe: str | None = None) -> np.ndarray:
        return self._table(probe)[SUCCESS]

    def _table(self, probe: str | None) -> np.ndarray:
        if probe is None:
            return self.counts
        return self.probe_counts.get(probe, np.zeros_like(self.counts))

    def loss_taxonomy(self, probe: str | None = None) -> dict[str, int]:
        t = self._table(probe)
        return {name: int(t[k].sum()) for k, name in enumerate(OUTCOMES)}

    def conservation_ok(self) -> bool:
        """Every opportunity carries exactly one outcome label."""
        expected = self.counters.get("opportunities")
        if expected is None:
            return True
        return int(self.counts.sum()) == expected


@dataclass
class PdrRow:
    bin_lo: float
    bin_hi: float
    pdr: float | None
    ci95: float | None
    opportunities: int

    @property
    def mid(self) -> float:
        return 0.5 * (self.bin_lo + self.bin_hi)


def ci95_halfwidth(values: Sequence[float]) -> float | None:
    v = np.asarray([x for x in values if x is not None and not math.isnan(x)], dtype=float)
    if len(v) < 2:
        return None
    sd = float(np.std(v, ddof=1))
    return float(stats.t.ppf(0.975, len(v) - 1) * sd / math.sqrt(len(v)))


def pdr_vs_distance(results: Sequence[ResultSet], probe: str | None = None) -> list[PdrRow]:
    if not results:
        raise ValueError("need at least one replication")
    edges = results[0].edges
    opp = np.sum([r.opportunities(probe) for r in results], axis=0)
    succ = np.sum([r.successes(probe) for r in results], axis=0)
    rows = []
    for b in range(len(edges) - 1):
        if opp[b] == 0:
            rows.append(PdrRow(float(edges[b]), float(edges[b + 1]), None, None, 0))
            continue
        per_seed = []
        for r in results:
            o = r.opportunities(probe)[b]
            if o:
                per_seed.append(r.successes(probe)[b] / o)
        rows.append(PdrRow(float(edges[b]), float(edges[b + 1]), float(succ[b] / opp[b]),
                           ci95_halfwidth(per_seed), int(opp[b])))
    return rows


def pdr_at(rows: Sequence[PdrRow], distance_m: float) -> PdrRow:
    for r in rows:
        if r.bin_lo <= distance_m < r.bin_hi:
            return r
    raise ValueError(f"distance {distance_m} m outside the binned range")


def pdr_drop_percent(rows: Sequence[PdrRow] | float, baseline: Sequence[PdrRow] | float,
                     at: float | None = None) -> float | None:
    """100 * (base - pdr) / base at the bin containing `at`; None if base is 0 or missing."""
    p = rows if isinstance(rows, (int, float)) else pdr_at(rows, at).pdr
    b = baseline if isinstance(baseline, (int, float)) else pdr_at(baseline, at).pdr
    if p is None or b is None or b == 0:
        return None
    return 100.0 * (b - p) / b


def range_at_pdr(rows: Sequence[PdrRow], target: float) -> float:
    """Far edge of the last populated bin whose PDR meets `target`; 0 if none does.

    Each bin's PDR is taken to hold across the whole bin, so a curve that
    stays above the target through a bin reaches that bin's upper edge.
    """
    best = 0.0
    for r in rows:
        if r.pdr is not None and r.pdr >= target - 1e-12:
            best = r.bin_hi
    return float(best)


def mean_ci(values: Sequence[float]) -> tuple[float, float | None]:
    v = [x for x in values if x is not None]
    return (float(np.mean(v)) if v else float("nan")), ci95_halfwidth(v)
