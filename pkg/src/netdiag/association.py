"""Device co-occurrence mining and association DAG construction.

Pairs of devices that alarm together across many diagnosis windows, where one
reliably alarms first, form directed association edges; greedy cycle breaking
then yields a DAG whose edges approximate fault-propagation directions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from statistics import median
from typing import Iterable, Mapping, Sequence

from .ingestion import DiagnosisSample
from .simulator import FailureEpisode
from .topology import TopologyGraph


@dataclass(frozen=True, eq=False)
class CooccurrenceStats:
    n_samples: int
    device_count: Mapping[int, int]
    pair_count: Mapping[tuple[int, int], int]
    first_time: Mapping[tuple[int, int], float]  # (device, sample index) -> earliest alarm time

    @cached_property
    def samples_of(self) -> dict[int, frozenset[int]]:
        acc: dict[int, set[int]] = {}
        for dev, idx in self.first_time:
            acc.setdefault(dev, set()).add(idx)
        return {dev: frozenset(v) for dev, v in acc.items()}


def mine_cooccurrence(samples: Sequence[DiagnosisSample]) -> CooccurrenceStats:
    """Count, per unordered device pair, the samples where both devices alarm.

    Membership is set semantics: multiple records from one device inside one
    sample still count that sample once.
    """
    if not samples:
        raise ValueError("no samples to mine")
    device_count: dict[int, int] = {}
    pair_count: dict[tuple[int, int], int] = {}
    first_time: dict[tuple[int, int], float] = {}
    for idx, sample in enumerate(samples):
        firsts: dict[int, float] = {}
        for rec in sample.records:
            cur = firsts.get(rec.device_id)
            if cur is None or rec.timestamp < cur:
                firsts[rec.device_id] = rec.timestamp
        devices = sorted(firsts)
        for d in devices:
            device_count[d] = device_count.get(d, 0) + 1
            first_time[(d, idx)] = firsts[d]
        for i in range(len(devices)):
            for j in range(i + 1, len(devices)):
                key = (devices[i], devices[j])
                pair_count[key] = pair_count.get(key, 0) + 1
    return CooccurrenceStats(
        n_samples=len(samples),
        device_count=device_count,
        pair_count=pair_count,
        first_time=first_time,
    )


@dataclass(frozen=True)
class AssociationDag:
    vertices: tuple[int, ...]
    edges: tuple[tuple[int, int, float], ...]  # (src, dst, confidence)

    def __post_init__(self) -> None:
        vset = set(self.vertices)
        if len(vset) != len(self.vertices):
            raise ValueError("duplicate vertices")
        indeg: dict[int, int] = {v: 0 for v in self.vertices}
        out: dict[int, list[int]] = {v: [] for v in self.vertices}
        seen: set[tuple[int, int]] = set()
        for u, v, conf in self.edges:
            if u == v:
                raise ValueError(f"self-edge on {u}")
            if u not in vset or v not in vset:
                raise ValueError(f"edge endpoint not in vertex set: ({u}, {v})")
            if (u, v) in seen:
                raise ValueError(f"duplicate edge ({u}, {v})")
            if not 0.0 < conf <= 1.0:
                raise ValueError(f"confidence out of (0, 1]: {conf}")
            seen.add((u, v))
            out[u].append(v)
            indeg[v] += 1
        # Kahn topological sort doubles as the acyclicity check on every build.
        queue = [v for v in self.vertices if indeg[v] == 0]
        visited = 0
        while queue:
            v = queue.pop()
            visited += 1
            for w in out[v]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    queue.append(w)
        if visited != len(self.vertices):
            raise ValueError("edge set contains a cycle")

    @cached_property
    def edge_pairs(self) -> frozenset[tuple[int, int]]:
        return frozenset((u, v) for u, v, _ in self.edges)

    def confidence(self, u: int, v: int) -> float:
        for a, b, c in self.edges:
            if (a, b) == (u, v):
                return c
        raise KeyError((u, v))


def _strongly_connected_components(vertices: Sequence[int], edges: Iterable[tuple[int, int]]) -> list[set[int]]:
    adj: dict[int, list[int]] = {v: [] for v in vertices}
    for u, v in edges:
        adj[u].append(v)
    index_of: dict[int, int] = {}
    low: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    sccs: list[set[int]] = []
    counter = 0
    for root in vertices:
        if root in index_of:
            continue
        work: list[tuple[int, int]] = [(root, 0)]
        while work:
            v, pi = work[-1]
            if pi == 0:
                index_of[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack.add(v)
            advanced = False
            while pi < len(adj[v]):
                w = adj[v][pi]
                pi += 1
                work[-1] = (v, pi)
                if w not in index_of:
                    work.append((w, 0))
                    advanced = True
                    break
                if w in on_stack and index_of[w] < low[v]:
                    low[v] = index_of[w]
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                if low[v] < low[parent]:
                    low[parent] = low[v]
            if low[v] == index_of[v]:
                comp: set[int] = set()
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.add(w)
                    if w == v:
                        break
                sccs.append(comp)
    return sccs


def break_cycles(vertices: Sequence[int], weighted_edges: Mapping[tuple[int, int], float]) -> AssociationDag:
    """Greedily drop the weakest edge on a cycle until none remain.

    Each round recomputes strongly connected components; edges inside a
    multi-vertex component lie on at least one cycle, and the minimum by
    (confidence, (src, dst)) is removed. Edges on no cycle are never touched.
    """
    edges = dict(weighted_edges)
    while True:
        sccs = _strongly_connected_components(sorted(vertices), edges.keys())
        comp_of: dict[int, int] = {}
        comp_size: dict[int, int] = {}
        for ci, comp in enumerate(sccs):
            comp_size[ci] = len(comp)
            for v in comp:
                comp_of[v] = ci
        cyclic = [
            (conf, u, v)
            for (u, v), conf in edges.items()
            if comp_of[u] == comp_of[v] and comp_size[comp_of[u]] > 1
        ]
        if not cyclic:
            break
        _, u, v = min(cyclic)
        del edges[(u, v)]
    return AssociationDag(
        vertices=tuple(sorted(vertices)),
        edges=tuple(sorted((u, v, c) for (u, v), c in edges.items())),
    )


def build_dag(stats: CooccurrenceStats, min_support: float, min_confidence: float) -> AssociationDag:
    """Threshold co-occurring pairs, orient by median first-alarm precedence,
    then break cycles.

    A directed edge u -> v survives when support(u, v) >= min_support,
    confidence(u -> v) = pair / count(u) >= min_confidence, and u's median
    first-alarm time over co-occurring samples is strictly earlier than v's.
    Equal medians orient toward the lower device id.
    """
    if not 0.0 < min_support <= 1.0 or not 0.0 < min_confidence <= 1.0:
        raise ValueError("thresholds must lie in (0, 1]")
    if stats.n_samples <= 0:
        raise ValueError("stats cover zero samples")
    candidates: dict[tuple[int, int], float] = {}
    for (a, b), pc in sorted(stats.pair_count.items()):
        support = pc / stats.n_samples
        if support < min_support:
            continue
        shared = sorted(stats.samples_of[a] & stats.samples_of[b])
        med_a = median(stats.first_time[(a, idx)] for idx in shared)
        med_b = median(stats.first_time[(b, idx)] for idx in shared)
        if med_a < med_b:
            src, dst = a, b
        elif med_b < med_a:
            src, dst = b, a
        else:
            src, dst = max(a, b), min(a, b)
        confidence = pc / stats.device_count[src]
        if confidence >= min_confidence:
            candidates[(src, dst)] = confidence
    return break_cycles(sorted(stats.device_count), candidates)


@dataclass(frozen=True)
class RecoveryScore:
    precision: float
    recall: float


def dag_recovery_score(
    mined: AssociationDag,
    truth: TopologyGraph,
    episodes: Sequence[FailureEpisode],
) -> RecoveryScore:
    """Compare mined edges against the directed topology edges episodes actually traversed."""
    truth_devices = set(truth.by_id)
    stray = set(mined.vertices) - truth_devices
    if stray:
        raise ValueError(f"mined vertices not in topology: {sorted(stray)}")
    truth_edges: set[tuple[int, int]] = set()
    for ep in episodes:
        for u, v in ep.propagation_edges:
            truth_edges.add((u, v))
    mined_edges = set(mined.edge_pairs)
    hits = len(mined_edges & truth_edges)
    precision = hits / len(mined_edges) if mined_edges else 1.0
    recall = hits / len(truth_edges) if truth_edges else 1.0
    return RecoveryScore(precision=precision, recall=recall)


def dag_to_json(dag: AssociationDag) -> str:
    payload = {
        "vertices": list(dag.vertices),
        "edges": [{"from": u, "to": v, "confidence": c} for u, v, c in dag.edges],
    }
    return json.dumps(payload, indent=2)


def dag_from_json(text: str) -> AssociationDag:
    payload = json.loads(text)
    return AssociationDag(
        vertices=tuple(int(v) for v in payload["vertices"]),
        edges=tuple((int(e["from"]), int(e["to"]), float(e["confidence"])) for e in payload["edges"]),
    )


def save_dag(dag: AssociationDag, path: str | Path) -> None:
    Path(path).write_text(dag_to_json(dag), encoding="utf-8")


def load_dag(path: str | Path) -> AssociationDag:
    return dag_from_json(Path(path).read_text(encoding="utf-8"))
