"""Device/link topology of a synthetic mobile access network.

A topology is a flat undirected graph of devices. The generator produces the
usual three-tier layout: a ring of core routers, aggregation switches uplinked
to the ring, and base stations hanging off the aggregation layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path

from .util import derive_rng


class DeviceKind(Enum):
    CoreRouter = "CoreRouter"
    AggSwitch = "AggSwitch"
    BaseStation = "BaseStation"
    Server = "Server"


@dataclass(frozen=True)
class Device:
    id: int
    kind: DeviceKind
    vendor: int


def normalize_link(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class TopologyGraph:
    devices: tuple[Device, ...]
    links: tuple[tuple[int, int], ...]

    @cached_property
    def by_id(self) -> dict[int, Device]:
        return {d.id: d for d in self.devices}

    @cached_property
    def adjacency(self) -> dict[int, tuple[int, ...]]:
        adj: dict[int, list[int]] = {d.id: [] for d in self.devices}
        for a, b in self.links:
            adj[a].append(b)
            adj[b].append(a)
        return {v: tuple(sorted(ns)) for v, ns in adj.items()}

    def kind_of(self, device_id: int) -> DeviceKind:
        return self.by_id[device_id].kind

    def neighbors(self, device_id: int) -> tuple[int, ...]:
        return self.adjacency[device_id]

    @property
    def device_ids(self) -> tuple[int, ...]:
        return tuple(d.id for d in self.devices)


@dataclass(frozen=True)
class TopologySpec:
    n_core: int
    n_agg: int
    n_bs: int
    cross_link_prob: float
    seed: int

    def validate(self) -> None:
        if self.n_core < 1 or self.n_agg < 1 or self.n_bs < 1:
            raise ValueError("device counts must be >= 1")
        if not 0.0 <= self.cross_link_prob <= 1.0:
            raise ValueError("cross_link_prob must lie in [0, 1]")


def validate(g: TopologyGraph) -> list[str]:
    """Return a list of invariant violations; empty means the graph is well formed."""
    violations: list[str] = []
    if not g.devices:
        violations.append("no devices")
        return violations
    ids = [d.id for d in g.devices]
    seen: set[int] = set()
    for i in ids:
        if i in seen:
            violations.append(f"duplicate device id: {i}")
        seen.add(i)
    normalized: set[tuple[int, int]] = set()
    for a, b in g.links:
        if a == b:
            violations.append(f"self-loop: ({a}, {b})")
            continue
        if a not in seen or b not in seen:
            violations.append(f"unknown endpoint: ({a}, {b})")
            continue
        key = normalize_link(a, b)
        if key in normalized:
            violations.append(f"duplicate link: ({a}, {b})")
        normalized.add(key)
    if violations:
        return violations
    # Connectivity check only once the structural checks pass.
    start = ids[0]
    reached = {start}
    frontier = [start]
    while frontier:
        v = frontier.pop()
        for w in g.adjacency[v]:
            if w not in reached:
                reached.add(w)
                frontier.append(w)
    if len(reached) != len(seen):
        violations.append(f"disconnected: {len(seen) - len(reached)} unreachable devices")
    return violations


def generate_man_topology(spec: TopologySpec) -> TopologyGraph:
    """Deterministically generate a three-tier metro access topology.

    Core routers form a ring (a single link for two cores, nothing for one);
    aggregation switch i uplinks to core i % n_core, base station j to
    aggregation switch j % n_agg, and extra agg-agg links appear independently
    with cross_link_prob.
    """
    spec.validate()
    rng = derive_rng(spec.seed, "topology")
    devices: list[Device] = []
    core_ids = list(range(spec.n_core))
    agg_ids = list(range(spec.n_core, spec.n_core + spec.n_agg))
    bs_ids = list(range(spec.n_core + spec.n_agg, spec.n_core + spec.n_agg + spec.n_bs))
    for i in core_ids:
        devices.append(Device(i, DeviceKind.CoreRouter, int(rng.integers(0, 4))))
    for i in agg_ids:
        devices.append(Device(i, DeviceKind.AggSwitch, int(rng.integers(0, 4))))
    for i in bs_ids:
        devices.append(Device(i, DeviceKind.BaseStation, int(rng.integers(0, 4))))

    links: list[tuple[int, int]] = []
    if spec.n_core == 2:
        links.append((core_ids[0], core_ids[1]))
    elif spec.n_core >= 3:
        for i in range(spec.n_core):
            links.append(normalize_link(core_ids[i], core_ids[(i + 1) % spec.n_core]))
    for idx, a in enumerate(agg_ids):
        links.append(normalize_link(core_ids[idx % spec.n_core], a))
    for idx, b in enumerate(bs_ids):
        links.append(normalize_link(agg_ids[idx % spec.n_agg], b))
    for i in range(len(agg_ids)):
        for j in range(i + 1, len(agg_ids)):
            if rng.random() < spec.cross_link_prob:
                links.append((agg_ids[i], agg_ids[j]))

    g = TopologyGraph(devices=tuple(devices), links=tuple(sorted(set(links))))
    problems = validate(g)
    if problems:
        raise AssertionError(f"generator produced an invalid graph: {problems}")
    return g


def find_weak_links(g: TopologyGraph) -> set[tuple[int, int]]:
    """All bridges (cut edges) of the topology; removing any one disconnects it."""
    problems = validate(g)
    if problems:
        raise ValueError(f"invalid topology: {problems[0]}")
    disc: dict[int, int] = {}
    low: dict[int, int] = {}
    bridges: set[tuple[int, int]] = set()
    timer = 0
    for start in sorted(g.adjacency):
        if start in disc:
            continue
        disc[start] = low[start] = timer
        timer += 1
        stack: list[tuple[int, int | None, object]] = [(start, None, iter(g.adjacency[start]))]
        while stack:
            v, parent, it = stack[-1]
            advanced = False
            for w in it:  # type: ignore[union-attr]
                if w == parent:
                    continue
                if w in disc:
                    if disc[w] < low[v]:
                        low[v] = disc[w]
                else:
                    disc[w] = low[w] = timer
                    timer += 1
                    stack.append((w, v, iter(g.adjacency[w])))
                    advanced = True
                    break
            if not advanced:
                stack.pop()
                if stack:
                    pv = stack[-1][0]
                    if low[v] < low[pv]:
                        low[pv] = low[v]
                    if low[v] > disc[pv]:
                        bridges.add(normalize_link(pv, v))
    return bridges


def to_json(g: TopologyGraph) -> str:
    payload = {
        "devices": [{"id": d.id, "kind": d.kind.value, "vendor": d.vendor} for d in g.devices],
        "links": [[a, b] for a, b in g.links],
    }
    return json.dumps(payload, indent=2)


def from_json(text: str) -> TopologyGraph:
    payload = json.loads(text)
    devices = tuple(
        Device(int(d["id"]), DeviceKind(d["kind"]), int(d["vendor"])) for d in payload["devices"]
    )
    links = tuple((int(a), int(b)) for a, b in payload["links"])
    return TopologyGraph(devices=devices, links=links)


def save_topology(g: TopologyGraph, path: str | Path) -> None:
    Path(path).write_text(to_json(g), encoding="utf-8")


def load_topology(path: str | Path) -> TopologyGraph:
    return from_json(Path(path).read_text(encoding="utf-8"))
