"""Benchmark instance generation.

An instance class combines a customer topology (random, clustered, or
mixed), an arrival process (homogeneous or unimodal), a time-window
variant (deadlines or regular windows at three maximum widths), and an
expected total request count.  Episodes discretize an 8-hour horizon into
8 hourly epochs; each epoch samples a batch of requests whose attributes
are drawn uniformly and independently from the topology's customer pool.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .fileio import SolomonData, SolomonRow, read_solomon
from .model import ModelError, Request

HORIZON = 8 * 3600
EPOCH_SECONDS = 3600
NUM_EPOCHS = 8
EPOCH_TIMES = tuple(t * EPOCH_SECONDS for t in range(NUM_EPOCHS))

TOPOLOGY_GROUPS = ("R", "C", "RC")
ARRIVALS = ("HOM", "UNI")
TW_VARIANTS = ("DL2", "DL4", "DL8", "TW2", "TW4", "TW8")
EXPECTED_TOTALS = (300, 450, 600)

# expected arrivals per epoch at the 600-request reference scale
HOM_PROFILE = (75.0,) * 8
UNI_PROFILE = (20.0, 50.0, 80.0, 150.0, 150.0, 80.0, 50.0, 20.0)

_POOL_SIZE = 1000
_GRID = 1000.0
# fixed generation seeds so each named topology is a stable artifact
_TOPOLOGY_SEEDS = {"R1": 101, "R2": 102, "C1": 201, "C2": 202,
                   "RC1": 301, "RC2": 302}


class GenerationError(ModelError):
    """Raised for invalid generation parameters."""


@dataclass(frozen=True)
class Topology:
    """A normalized customer pool: integer travel times in seconds.

    ``travel`` covers the depot (row 0) and every customer; its largest
    entry equals one epoch duration.  ``services`` are scaled by the same
    factor as distances so all quantities share one time unit.
    """

    name: str
    travel: np.ndarray
    demands: tuple[int, ...]
    services: tuple[int, ...]
    capacity: int

    @property
    def num_customers(self) -> int:
        return len(self.demands)


@dataclass(frozen=True)
class InstanceClassSpec:
    """One cell of the benchmark design."""

    topology: str  # R | C | RC
    arrival: str  # HOM | UNI
    tw_variant: str  # DL2 .. TW8
    expected_total: float = 600.0

    def __post_init__(self) -> None:
        if self.topology not in TOPOLOGY_GROUPS:
            raise GenerationError(f"unknown topology group {self.topology!r}")
        if self.arrival not in ARRIVALS:
            raise GenerationError(f"unknown arrival process {self.arrival!r}")
        if self.tw_variant not in TW_VARIANTS:
            raise GenerationError(f"unknown tw variant {self.tw_variant!r}")
        if self.expected_total <= 0:
            raise GenerationError("expected_total must be positive")

    @property
    def label(self) -> str:
        total = self.expected_total
        tag = str(int(total)) if float(total).is_integer() else f"{total:g}"
        return f"{self.topology}-{self.arrival}-{self.tw_variant}-{tag}"

    @property
    def deadline(self) -> bool:
        return self.tw_variant.startswith("DL")

    @property
    def max_width(self) -> int:
        """Maximum time-window width in seconds."""
        return int(self.tw_variant[2:]) * 3600

    def expected_arrivals(self, t: int) -> float:
        """Expected request count for epoch t (1-based)."""
        if not 1 <= t <= NUM_EPOCHS:
            raise GenerationError(f"epoch {t} out of range")
        profile = HOM_PROFILE if self.arrival == "HOM" else UNI_PROFILE
        return profile[t - 1] * (self.expected_total / 600.0)

    def arrival_support(self, t: int) -> tuple[int, int]:
        mean = self.expected_arrivals(t)
        return math.floor(0.9 * mean), math.floor(1.1 * mean)


def full_factorial(expected_total: float = 600.0) -> list[InstanceClassSpec]:
    """All 36 topology x arrival x window classes at one scale."""
    return [InstanceClassSpec(g, a, v, expected_total)
            for g in TOPOLOGY_GROUPS for a in ARRIVALS for v in TW_VARIANTS]


def source_names(group: str) -> tuple[str, str]:
    """The two named source pools for a topology group."""
    if group not in TOPOLOGY_GROUPS:
        raise GenerationError(f"unknown topology group {group!r}")
    return (f"{group}1", f"{group}2")


def synth_solomon(name: str, seed: Optional[int] = None) -> SolomonData:
    """Create a synthetic 1000-customer Solomon table.

    Series-1 pools get a tight vehicle capacity, series-2 a loose one.
    R pools scatter customers uniformly, C pools group them around cluster
    seeds, and RC pools mix the two half and half.
    """
    if name not in _TOPOLOGY_SEEDS:
        raise GenerationError(f"unknown topology name {name!r}; "
                              f"expected one of {sorted(_TOPOLOGY_SEEDS)}")
    rng = np.random.default_rng(_TOPOLOGY_SEEDS[name] if seed is None else seed)
    group = name[:-1]
    if group == "R":
        pts = rng.uniform(0.0, _GRID, size=(_POOL_SIZE, 2))
    else:
        n_clustered = _POOL_SIZE if group == "C" else _POOL_SIZE // 2
        centers = rng.uniform(0.1 * _GRID, 0.9 * _GRID, size=(25, 2))
        which = rng.integers(0, len(centers), size=n_clustered)
        pts = centers[which] + rng.normal(0.0, 0.035 * _GRID,
                                          size=(n_clustered, 2))
        pts = np.clip(pts, 0.0, _GRID)
        if group == "RC":
            scattered = rng.uniform(0.0, _GRID,
                                    size=(_POOL_SIZE - n_clustered, 2))
            pts = np.vstack([pts, scattered])
    demands = rng.integers(1, 51, size=_POOL_SIZE)
    service = 90 if group == "C" else 10
    capacity = 200 if name.endswith("1") else 1000
    rows = [SolomonRow(id=0, x=_GRID / 2, y=_GRID / 2, demand=0, ready=0,
                       due=HORIZON, service=0)]
    for i in range(_POOL_SIZE):
        rows.append(SolomonRow(id=i + 1, x=float(pts[i, 0]), y=float(pts[i, 1]),
                               demand=int(demands[i]), ready=0, due=HORIZON,
                               service=service))
    return SolomonData(name=name, vehicles=250, capacity=capacity,
                       rows=tuple(rows))


def normalize_topology(data: SolomonData,
                       max_travel: int = EPOCH_SECONDS) -> Topology:
    """Build a Topology with travel times scaled to the epoch duration.

    Euclidean distances are scaled so the largest pairwise travel time
    equals ``max_travel``, then rounded to whole seconds.  Service times
    are scaled by the same factor so the time unit stays consistent.
    """
    pts = np.array([[r.x, r.y] for r in data.rows], dtype=float)
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    far = float(dist.max())
    if far <= 0:
        raise GenerationError("degenerate topology: all points coincide")
    factor = max_travel / far
    travel = np.rint(dist * factor).astype(np.int64)
    np.fill_diagonal(travel, 0)
    services = tuple(int(round(r.service * factor)) for r in data.rows[1:])
    demands = tuple(r.demand for r in data.rows[1:])
    return Topology(name=data.name, travel=travel, demands=demands,
                    services=services, capacity=data.capacity)


def load_topology(path: str, max_travel: int = EPOCH_SECONDS) -> Topology:
    """Read a Solomon file and normalize it."""
    return normalize_topology(read_solomon(path), max_travel)


_topology_cache: dict[str, Topology] = {}


def builtin_topology(name: str) -> Topology:
    """The named synthetic pool (R1, R2, C1, C2, RC1, RC2), cached."""
    if name not in _topology_cache:
        _topology_cache[name] = normalize_topology(synth_solomon(name))
    return _topology_cache[name]


def _sample_window(spec: InstanceClassSpec, release: int, horizon: int,
                   rng: np.random.Generator) -> tuple[int, int]:
    width = int(rng.integers(1, spec.max_width // 3600 + 1)) * 3600
    if spec.deadline:
        return release, min(release + width, horizon)
    while True:
        start = int(rng.integers(release, horizon + 1))
        end = min(start + width, horizon)
        if end > start:
            return start, end


def _servable_at_release(topology: Topology, location: int, service: int,
                         early: int, late: int, release: int,
                         horizon: int) -> bool:
    """Can a route serve this request if it departs right at release?"""
    to = int(topology.travel[0, location])
    back = int(topology.travel[location, 0])
    arrive = release + to
    begin = max(arrive, early)
    return arrive <= late and begin + service + back <= horizon


def sample_epoch_requests(topology: Topology, spec: InstanceClassSpec, t: int,
                          rng: np.random.Generator,
                          id_start: int = 1,
                          horizon: int = HORIZON) -> list[Request]:
    """Sample one epoch's batch of requests (epoch t is 1-based).

    The batch size is discrete-uniform on the class's support.  Location,
    demand, and service time are three independent uniform picks over the
    customer pool.  Attribute tuples that could never be served even when
    dispatched immediately are redrawn, keeping the batch size intact.
    """
    lo, hi = spec.arrival_support(t)
    count = int(rng.integers(lo, hi + 1))
    release = EPOCH_TIMES[t - 1]
    n = topology.num_customers
    out: list[Request] = []
    for k in range(count):
        while True:
            loc = int(rng.integers(1, n + 1))
            demand = topology.demands[int(rng.integers(0, n))]
            service = topology.services[int(rng.integers(0, n))]
            early, late = _sample_window(spec, release, horizon, rng)
            if _servable_at_release(topology, loc, service, early, late,
                                    release, horizon):
                break
        out.append(Request(id=id_start + k, location=loc, demand=demand,
                           service=service, tw_early=early, tw_late=late,
                           release=release))
    return out


@dataclass(frozen=True)
class EpisodeConfigRecord:
    """One episode of the benchmark matrix, as a plain record."""

    class_spec: InstanceClassSpec
    source: str  # named topology pool, e.g. "R1"
    seed: int

    def to_line(self) -> str:
        return (f"{self.class_spec.topology} {self.source} "
                f"{self.class_spec.arrival} {self.class_spec.tw_variant} "
                f"{self.class_spec.expected_total:g} {self.seed}")

    @staticmethod
    def from_line(line: str) -> "EpisodeConfigRecord":
        parts = line.split()
        if len(parts) != 6:
            raise GenerationError(f"bad episode config line: {line!r}")
        spec = InstanceClassSpec(parts[0], parts[2], parts[3], float(parts[4]))
        return EpisodeConfigRecord(class_spec=spec, source=parts[1],
                                   seed=int(parts[5]))


def build_class_matrix(specs: Sequence[InstanceClassSpec], replications: int,
                       master_seed: int = 0) -> list[EpisodeConfigRecord]:
    """Expand classes into per-episode configs, deterministically.

    Replications are split evenly across a class's two source pools, and
    episode seeds derive from (master_seed, class index, replication).
    """
    out: list[EpisodeConfigRecord] = []
    for ci, spec in enumerate(specs):
        sources = source_names(spec.topology)
        for r in range(replications):
            seed_seq = np.random.SeedSequence([master_seed, ci, r])
            seed = int(seed_seq.generate_state(1)[0])
            out.append(EpisodeConfigRecord(class_spec=spec,
                                           source=sources[r % 2],
                                           seed=seed))
    return out
