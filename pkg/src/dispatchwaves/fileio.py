"""Plain-text file formats.

Two input formats are supported:

* classic Solomon ``.txt`` tables (used for customer topologies), and
* a VRPLIB-style sectioned format for static dispatch-window instances,
  extended with optional RELEASE_TIME_SECTION and DISPATCH_WINDOW_SECTION
  blocks.

Outputs are a routes file (one route per line: departure time followed by
visit ids) and a JSON summary record.  The exact grammar is documented in
the README.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, TextIO, Union

import numpy as np

from .model import (
    FleetSpec,
    ModelError,
    Request,
    Solution,
    StaticInstance,
    VehicleClass,
)


class FormatError(ModelError):
    """Raised when an input file cannot be parsed."""


@dataclass(frozen=True)
class SolomonRow:
    """One customer line of a Solomon table."""

    id: int
    x: float
    y: float
    demand: int
    ready: int
    due: int
    service: int


@dataclass(frozen=True)
class SolomonData:
    """Parsed Solomon file: depot is ``rows[0]``."""

    name: str
    vehicles: int
    capacity: int
    rows: tuple[SolomonRow, ...]


def read_solomon(path: str) -> SolomonData:
    """Parse a classic Solomon-format table.

    Expected layout: instance name, a VEHICLE block with NUMBER/CAPACITY,
    then a CUSTOMER table whose first row is the depot.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh]
    name = ""
    vehicles = capacity = -1
    rows: list[SolomonRow] = []
    mode = "name"
    for ln in lines:
        if not ln:
            continue
        up = ln.upper()
        if up.startswith("VEHICLE"):
            mode = "vehicle"
            continue
        if up.startswith("CUSTOMER"):
            mode = "customer"
            continue
        if mode == "name" and not name:
            name = ln.split()[0]
            continue
        parts = ln.split()
        if mode == "vehicle":
            if parts[0].upper() == "NUMBER":
                continue
            if len(parts) >= 2:
                vehicles, capacity = int(parts[0]), int(parts[1])
            continue
        if mode == "customer":
            if not parts[0].lstrip("-").isdigit():
                continue  # column header line
            if len(parts) < 7:
                raise FormatError(f"short customer row: {ln!r}")
            rows.append(SolomonRow(
                id=int(parts[0]), x=float(parts[1]), y=float(parts[2]),
                demand=int(parts[3]), ready=int(parts[4]), due=int(parts[5]),
                service=int(parts[6]),
            ))
    if capacity < 0:
        raise FormatError("missing VEHICLE capacity block")
    if len(rows) < 2:
        raise FormatError("need a depot row and at least one customer")
    return SolomonData(name=name or "unnamed", vehicles=vehicles,
                       capacity=capacity, rows=tuple(rows))


def write_solomon(path: str, data: SolomonData) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{data.name}\n\nVEHICLE\nNUMBER     CAPACITY\n")
        fh.write(f"  {data.vehicles}         {data.capacity}\n\n")
        fh.write("CUSTOMER\n")
        fh.write("CUST NO.   XCOORD.   YCOORD.    DEMAND   READY TIME"
                 "   DUE DATE   SERVICE TIME\n\n")
        for r in data.rows:
            fh.write(f"  {r.id:5d} {r.x:10.2f} {r.y:10.2f} {r.demand:8d}"
                     f" {r.ready:10d} {r.due:10d} {r.service:10d}\n")


_HEADER_KEYS = {
    "NAME", "TYPE", "COMMENT", "DIMENSION", "CAPACITY", "HORIZON",
    "EARLIEST_DISPATCH", "EDGE_WEIGHT_TYPE", "EDGE_WEIGHT_FORMAT",
}
_SECTION_KEYS = {
    "NODE_COORD_SECTION", "DEMAND_SECTION", "SERVICE_TIME_SECTION",
    "TIME_WINDOW_SECTION", "RELEASE_TIME_SECTION", "DISPATCH_WINDOW_SECTION",
    "FLEET_SECTION", "EDGE_WEIGHT_SECTION", "DEPOT_SECTION",
}


def _tokenize(text: str) -> tuple[dict[str, str], dict[str, list[list[str]]]]:
    headers: dict[str, str] = {}
    sections: dict[str, list[list[str]]] = {}
    current: Optional[str] = None
    for raw in text.splitlines():
        ln = raw.strip()
        if not ln or ln.startswith("#"):
            continue
        if ln == "EOF":
            break
        bare = ln.split(":")[0].strip().upper()
        if bare in _SECTION_KEYS:
            current = bare
            sections[current] = []
            continue
        if ":" in ln and bare in _HEADER_KEYS:
            current = None
            headers[bare] = ln.split(":", 1)[1].strip()
            continue
        if current is None:
            raise FormatError(f"unexpected line outside any section: {ln!r}")
        sections[current].append(ln.split())
    return headers, sections


def _id_map(rows: list[list[str]], values: int, what: str,
            allow_depot: bool = False) -> dict[int, tuple[int, ...]]:
    out: dict[int, tuple[int, ...]] = {}
    for parts in rows:
        if len(parts) != values + 1:
            raise FormatError(f"{what}: expected id plus {values} values, got {parts}")
        rid = int(parts[0])
        if rid == 0 and not allow_depot:
            continue  # conventional depot row, ignored
        if rid in out:
            raise FormatError(f"{what}: duplicate id {rid}")
        out[rid] = tuple(int(float(p)) for p in parts[1:])
    return out


def read_instance(path_or_file: Union[str, TextIO]) -> StaticInstance:
    """Read a static dispatch-window instance in the sectioned format."""
    if isinstance(path_or_file, str):
        with open(path_or_file, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = path_or_file.read()
    headers, sections = _tokenize(text)

    horizon = int(headers.get("HORIZON", "0"))
    if horizon <= 0:
        raise FormatError("missing or non-positive HORIZON header")
    earliest = int(headers.get("EARLIEST_DISPATCH", "0"))

    if "TIME_WINDOW_SECTION" not in sections:
        raise FormatError("missing TIME_WINDOW_SECTION")
    windows = _id_map(sections["TIME_WINDOW_SECTION"], 2, "TIME_WINDOW_SECTION")
    ids = sorted(windows)
    if not ids:
        raise FormatError("instance has no requests")
    demands = _id_map(sections.get("DEMAND_SECTION", []), 1, "DEMAND_SECTION")
    services = _id_map(sections.get("SERVICE_TIME_SECTION", []), 1,
                       "SERVICE_TIME_SECTION")
    releases = _id_map(sections.get("RELEASE_TIME_SECTION", []), 1,
                       "RELEASE_TIME_SECTION")
    dispatch = _id_map(sections.get("DISPATCH_WINDOW_SECTION", []), 2,
                       "DISPATCH_WINDOW_SECTION")

    n = len(ids)
    dim = int(headers.get("DIMENSION", str(n + 1)))
    if dim != n + 1:
        raise FormatError(f"DIMENSION {dim} does not match {n} requests + depot")

    wtype = headers.get("EDGE_WEIGHT_TYPE", "EXPLICIT").upper()
    if wtype == "EXPLICIT":
        rows = sections.get("EDGE_WEIGHT_SECTION")
        if not rows:
            raise FormatError("EXPLICIT weights require EDGE_WEIGHT_SECTION")
        flat = [int(float(v)) for parts in rows for v in parts]
        if len(flat) != dim * dim:
            raise FormatError(f"edge weights: expected {dim * dim} entries, "
                              f"got {len(flat)}")
        travel = np.array(flat, dtype=np.int64).reshape(dim, dim)
    elif wtype == "EUC_2D":
        coords = _id_map(sections.get("NODE_COORD_SECTION", []), 2,
                         "NODE_COORD_SECTION", allow_depot=True)
        if 0 not in coords:
            raise FormatError("EUC_2D requires a depot row (id 0) in "
                              "NODE_COORD_SECTION")
        pts = np.array([coords[0]] + [coords[i] for i in ids], dtype=float)
        diff = pts[:, None, :] - pts[None, :, :]
        travel = np.rint(np.hypot(diff[..., 0], diff[..., 1])).astype(np.int64)
    else:
        raise FormatError(f"unsupported EDGE_WEIGHT_TYPE {wtype!r}")

    if "FLEET_SECTION" in sections:
        classes = []
        for parts in sections["FLEET_SECTION"]:
            if len(parts) != 4:
                raise FormatError(f"FLEET_SECTION: expected 4 fields, got {parts}")
            count = None if parts[0].lower() in ("inf", "-1") else int(parts[0])
            classes.append(VehicleClass(capacity=int(parts[1]), count=count,
                                        fixed_cost=int(parts[2]),
                                        available_from=int(parts[3])))
        fleet = FleetSpec(classes=tuple(classes))
    else:
        cap = int(headers.get("CAPACITY", "0"))
        if cap <= 0:
            raise FormatError("need CAPACITY header or FLEET_SECTION")
        fleet = FleetSpec.unlimited(cap)

    requests = []
    for pos, rid in enumerate(ids):
        e, l = windows[rid]
        dw = dispatch.get(rid, (-1, -1))
        requests.append(Request(
            id=rid, location=pos + 1,
            demand=demands.get(rid, (0,))[0],
            service=services.get(rid, (0,))[0],
            tw_early=e, tw_late=l,
            release=releases.get(rid, (0,))[0],
            depart_early=dw[0], depart_late=dw[1],
        ))
    return StaticInstance(requests=tuple(requests), travel=travel,
                          horizon=horizon, fleet=fleet,
                          earliest_dispatch=earliest)


def write_instance(path: str, instance: StaticInstance,
                   name: str = "instance") -> None:
    """Write a static instance in the sectioned format (EXPLICIT weights)."""
    reqs = instance.requests
    ids = [r.id for r in reqs]
    if any(i == 0 for i in ids):
        raise FormatError("request id 0 is reserved for the depot")
    locs = [instance.depot_location] + [r.location for r in reqs]
    sub = instance.travel[np.ix_(locs, locs)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"NAME : {name}\nTYPE : VRPTW-DW\n")
        fh.write(f"DIMENSION : {len(ids) + 1}\n")
        fh.write(f"HORIZON : {instance.horizon}\n")
        fh.write(f"EARLIEST_DISPATCH : {instance.earliest_dispatch}\n")
        fh.write("EDGE_WEIGHT_TYPE : EXPLICIT\n")
        fh.write("EDGE_WEIGHT_FORMAT : FULL_MATRIX\n")
        fh.write("FLEET_SECTION\n")
        for cls in instance.fleet.classes:
            count = "inf" if cls.count is None else str(cls.count)
            fh.write(f"{count} {cls.capacity} {cls.fixed_cost} "
                     f"{cls.available_from}\n")
        fh.write("DEMAND_SECTION\n")
        for r in reqs:
            fh.write(f"{r.id} {r.demand}\n")
        fh.write("SERVICE_TIME_SECTION\n")
        for r in reqs:
            fh.write(f"{r.id} {r.service}\n")
        fh.write("TIME_WINDOW_SECTION\n")
        for r in reqs:
            fh.write(f"{r.id} {r.tw_early} {r.tw_late}\n")
        fh.write("RELEASE_TIME_SECTION\n")
        for r in reqs:
            fh.write(f"{r.id} {r.release}\n")
        fh.write("DISPATCH_WINDOW_SECTION\n")
        for r in reqs:
            fh.write(f"{r.id} {r.depart_early} {r.depart_late}\n")
        fh.write("EDGE_WEIGHT_SECTION\n")
        for row in sub:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")
        fh.write("EOF\n")


def write_routes(path: str, solution: Solution) -> None:
    """One route per line: departure time, then the visit ids in order."""
    with open(path, "w", encoding="utf-8") as fh:
        for route in solution.routes:
            fh.write(" ".join([str(route.departure)]
                              + [str(v) for v in route.visits]) + "\n")


def read_routes(path: str) -> list[tuple[int, tuple[int, ...]]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln in fh:
            parts = ln.split()
            if not parts:
                continue
            out.append((int(parts[0]), tuple(int(v) for v in parts[1:])))
    return out


def summary_record(solution: Solution, runtime_ms: Optional[float] = None,
                   **extra: object) -> dict:
    """Machine-readable summary of a solve."""
    rec: dict = {
        "cost": int(solution.cost),
        "penalized_cost": float(solution.penalized_cost),
        "feasible": bool(solution.feasible),
        "num_routes": len(solution.routes),
        "num_requests": sum(len(r.visits) for r in solution.routes),
    }
    if runtime_ms is not None:
        rec["runtime_ms"] = round(float(runtime_ms), 1)
    rec.update(extra)
    return rec


def write_summary(path: str, record: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def append_jsonl(fh: TextIO, record: dict) -> None:
    fh.write(json.dumps(record, sort_keys=True) + "\n")
