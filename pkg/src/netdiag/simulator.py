"""Synthetic fault injection and alarm-flood scenario generation.

A failure starts at a root device and percolates over topology links: each
edge from an affected device to a not-yet-affected neighbor independently
carries the fault with probability hop_prob, after a strictly positive delay.
Every affected device emits one alarm record per template registered for
(cause, device kind); kinds without templates stay silent but still propagate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .ingestion import (
    DEFAULT_WINDOW_SECONDS,
    AlarmLog,
    AlarmRecord,
    Severity,
    ALL_DAY,
    OFF_PEAK,
    PEAK,
)
from .topology import DeviceKind, TopologyGraph
from .util import derive_rng, derive_seed, stable_hash64


class Rarity(Enum):
    Common = "Common"
    Rare = "Rare"


@dataclass(frozen=True)
class RootCause:
    id: int
    name: str
    applicable_kinds: frozenset[DeviceKind]
    rarity: Rarity


@dataclass(frozen=True, eq=False)
class FaultCatalog:
    causes: tuple[RootCause, ...]
    alarm_templates: Mapping[tuple[int, DeviceKind], tuple[str, ...]]
    hop_prob: float
    delay_mean: float
    delay_jitter: float

    def validate(self) -> None:
        ids = [c.id for c in self.causes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate cause ids")
        names = [c.name for c in self.causes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate cause names")
        if not 0.0 < self.hop_prob <= 1.0:
            raise ValueError("hop_prob must lie in (0, 1]")
        if not self.delay_mean > self.delay_jitter >= 0.0:
            raise ValueError("need delay_mean > delay_jitter >= 0 so delays stay positive")
        for cause in self.causes:
            if not cause.applicable_kinds:
                raise ValueError(f"cause {cause.id} has no applicable kinds")
            for kind in cause.applicable_kinds:
                templates = self.alarm_templates.get((cause.id, kind), ())
                if not templates:
                    raise ValueError(f"cause {cause.id} lacks templates for applicable kind {kind.value}")
        for (cid, _kind), templates in self.alarm_templates.items():
            if cid not in set(ids):
                raise ValueError(f"templates reference unknown cause {cid}")
            if any(not t for t in templates):
                raise ValueError("empty alarm template name")

    def cause(self, cause_id: int) -> RootCause:
        for c in self.causes:
            if c.id == cause_id:
                return c
        raise ValueError(f"unknown cause id: {cause_id}")

    def templates_for(self, cause_id: int, kind: DeviceKind) -> tuple[str, ...]:
        return tuple(self.alarm_templates.get((cause_id, kind), ()))


@dataclass(frozen=True)
class FailureEpisode:
    root_device: int
    cause_id: int
    root_time: float
    records: tuple[AlarmRecord, ...]
    propagation_edges: tuple[tuple[int, int], ...]


class Scenario(Enum):
    AllDay = ALL_DAY
    OffPeak = OFF_PEAK
    Peak = PEAK


SCENARIO_HOURS = {
    Scenario.AllDay: (0, 24),
    Scenario.OffPeak: (0, 18),
    Scenario.Peak: (18, 24),
}

# Cause-mix mass allowed on Rare causes, by scenario.
OFF_PEAK_MAX_RARE_MASS = 0.1
PEAK_MIN_RARE_MASS = 0.5


@dataclass(frozen=True)
class ScenarioSpec:
    name: Scenario
    time_range: tuple[int, int]
    n_episodes: int
    cause_mix: tuple[tuple[int, float], ...]
    noise_rate: float
    seed: int

    def validate(self) -> None:
        if self.time_range != SCENARIO_HOURS[self.name]:
            raise ValueError(f"{self.name.value} must use hour range {SCENARIO_HOURS[self.name]}")
        if self.n_episodes < 0:
            raise ValueError("n_episodes must be >= 0")
        if self.noise_rate < 0:
            raise ValueError("noise_rate must be >= 0")
        if not self.cause_mix:
            raise ValueError("cause_mix is empty")
        ids = [cid for cid, _ in self.cause_mix]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate cause in mix")
        total = sum(w for _, w in self.cause_mix)
        if any(w < 0 for _, w in self.cause_mix) or abs(total - 1.0) > 1e-9:
            raise ValueError("cause_mix weights must be >= 0 and sum to 1")


NOISE_ALARM_NAMES = (
    "periodic config audit",
    "software heartbeat",
    "interface statistics rollover",
    "inventory poll complete",
    "login session opened",
    "snmp walk finished",
)

_FAULT_SEVERITIES = (Severity.Critical, Severity.Major, Severity.Minor)
_NOISE_SEVERITIES = (Severity.Warning, Severity.Minor)

# Fraction of noise records emitted with a blank alarm name, exercising the
# cleaning stage downstream without ever touching episode records.
_NOISE_MISSING_NAME_RATE = 0.05


def severity_for_alarm(name: str, noise: bool = False) -> Severity:
    pool = _NOISE_SEVERITIES if noise else _FAULT_SEVERITIES
    if not name:
        return Severity.Warning
    return pool[stable_hash64("severity", name) % len(pool)]


def _extras_for(g: TopologyGraph, device_id: int, width: int) -> tuple[str, ...]:
    if width == 0:
        return ()
    dev = g.by_id[device_id]
    extras = [""] * width
    extras[0] = f"v{dev.vendor}"
    if width > 1:
        extras[1] = dev.kind.value
    return tuple(extras)


def inject_failure(
    g: TopologyGraph,
    catalog: FaultCatalog,
    cause: RootCause,
    root: int,
    t0: float,
    seed: int,
    extras_width: int = 16,
    start_record_id: int = 0,
) -> FailureEpisode:
    """Percolate one fault from `root` at time t0 and emit its alarm records."""
    catalog.validate()
    if root not in g.by_id:
        raise ValueError(f"root device {root} not in topology")
    kind = g.kind_of(root)
    if kind not in cause.applicable_kinds:
        raise ValueError(f"cause {cause.id} ({cause.name}) not applicable to {kind.value}")
    if catalog.cause(cause.id) != cause:
        raise ValueError("cause object does not match catalog entry")
    if t0 < 0:
        raise ValueError("t0 must be >= 0")

    rng = derive_rng(seed, "inject")
    infected_at: dict[int, float] = {root: float(t0)}
    traversed: list[tuple[int, int]] = []
    frontier = [root]
    while frontier:
        nxt: list[int] = []
        for parent in frontier:
            for nbr in g.neighbors(parent):
                if nbr in infected_at:
                    continue
                if rng.random() < catalog.hop_prob:
                    # Delays are strictly positive, so the root record stays earliest.
                    delay = catalog.delay_mean + (2.0 * rng.random() - 1.0) * catalog.delay_jitter
                    infected_at[nbr] = infected_at[parent] + delay
                    traversed.append((parent, nbr))
                    nxt.append(nbr)
        frontier = sorted(nxt)

    emissions: list[tuple[float, int, str]] = []
    for dev in sorted(infected_at):
        for name in catalog.templates_for(cause.id, g.kind_of(dev)):
            emissions.append((infected_at[dev], dev, name))
    emissions.sort(key=lambda e: (e[0], e[1], e[2]))
    records = tuple(
        AlarmRecord(
            record_id=start_record_id + i,
            timestamp=ts,
            device_id=dev,
            alarm_name=name,
            severity=severity_for_alarm(name),
            extras=_extras_for(g, dev, extras_width),
        )
        for i, (ts, dev, name) in enumerate(emissions)
    )
    return FailureEpisode(
        root_device=root,
        cause_id=cause.id,
        root_time=float(t0),
        records=records,
        propagation_edges=tuple(traversed),
    )


def make_cause_mix(
    catalog: FaultCatalog,
    rare_mass: float,
    kinds_present: set[DeviceKind] | None = None,
) -> tuple[tuple[int, float], ...]:
    """Uniform-within-rarity mix: Rare causes share rare_mass, Common the rest."""
    if not 0.0 <= rare_mass <= 1.0:
        raise ValueError("rare_mass must lie in [0, 1]")
    usable = [
        c
        for c in catalog.causes
        if kinds_present is None or (c.applicable_kinds & kinds_present)
    ]
    rare = [c for c in usable if c.rarity is Rarity.Rare]
    common = [c for c in usable if c.rarity is Rarity.Common]
    if rare_mass > 0 and not rare:
        raise ValueError("rare_mass > 0 but no Rare cause is usable")
    if rare_mass < 1 and not common:
        raise ValueError("rare_mass < 1 but no Common cause is usable")
    mix: list[tuple[int, float]] = []
    for c in common:
        mix.append((c.id, (1.0 - rare_mass) / len(common)))
    for c in rare:
        mix.append((c.id, rare_mass / len(rare)))
    return tuple(sorted((cid, w) for cid, w in mix if w > 0.0))


def _check_rarity_mass(catalog: FaultCatalog, spec: ScenarioSpec) -> None:
    rare_mass = sum(w for cid, w in spec.cause_mix if catalog.cause(cid).rarity is Rarity.Rare)
    if spec.name is Scenario.OffPeak and rare_mass > OFF_PEAK_MAX_RARE_MASS + 1e-9:
        raise ValueError(f"OffPeak rare mass {rare_mass:.3f} exceeds {OFF_PEAK_MAX_RARE_MASS}")
    if spec.name is Scenario.Peak and rare_mass < PEAK_MIN_RARE_MASS - 1e-9:
        raise ValueError(f"Peak rare mass {rare_mass:.3f} below {PEAK_MIN_RARE_MASS}")


def generate_scenario(
    g: TopologyGraph,
    catalog: FaultCatalog,
    spec: ScenarioSpec,
    extras_width: int = 16,
    window_seconds: float = DEFAULT_WINDOW_SECONDS,
    max_days: int = 64,
) -> tuple[AlarmLog, list[tuple[int, int]]]:
    """Generate an alarm log plus (root record id, cause id) labels.

    Episode roots are laid out on a per-day slot grid so consecutive windows
    can never overlap (gap > 2 * window), insetting slots from the range edges
    so OffPeak and Peak logs stay non-overlapping even after merging.
    """
    spec.validate()
    catalog.validate()
    _check_rarity_mass(catalog, spec)

    start_h, end_h = spec.time_range
    day_span = (end_h - start_h) * 3600.0
    gap = 2.0 * window_seconds + 1.0
    inset = gap / 2.0
    usable = day_span - 2.0 * inset
    if spec.n_episodes > 0:
        if usable < gap:
            raise ValueError("time range too short for the episode window spacing")
        per_day = max(1, int(usable // (1.5 * gap)))
        n_days = -(-spec.n_episodes // per_day)  # ceil
        if n_days > max_days:
            raise ValueError(
                f"{spec.n_episodes} episodes need {n_days} days of {per_day} slots; limit is {max_days}"
            )
        slot_len = usable / per_day
    else:
        per_day, n_days, slot_len = 1, 1, usable

    mix = sorted(spec.cause_mix)
    cause_ids = [cid for cid, _ in mix]
    weights = [w for _, w in mix]
    applicable: dict[int, list[int]] = {}
    for cid in cause_ids:
        cause = catalog.cause(cid)
        devs = sorted(d.id for d in g.devices if d.kind in cause.applicable_kinds)
        if not devs:
            raise ValueError(f"cause {cid} ({cause.name}) has no applicable device in topology")
        applicable[cid] = devs

    rng = derive_rng(spec.seed, "scenario", spec.name.value)
    episodes: list[FailureEpisode] = []
    if spec.n_episodes > 0:
        cause_draws = rng.choice(len(cause_ids), size=spec.n_episodes, p=weights)
        for i in range(spec.n_episodes):
            cid = cause_ids[int(cause_draws[i])]
            cause = catalog.cause(cid)
            devs = applicable[cid]
            root = devs[int(rng.integers(0, len(devs)))]
            day, slot = divmod(i, per_day)
            jitter = rng.random() * max(slot_len - gap, 0.0)
            t0 = day * 86400.0 + start_h * 3600.0 + inset + slot * slot_len + jitter
            episodes.append(
                inject_failure(
                    g,
                    catalog,
                    cause,
                    root,
                    t0,
                    seed=derive_seed(spec.seed, "episode", i),
                    extras_width=extras_width,
                )
            )

    noise_rng = derive_rng(spec.seed, "noise", spec.name.value)
    noise: list[tuple[float, int, str]] = []
    device_ids = sorted(g.by_id)
    for day in range(n_days):
        count = int(noise_rng.poisson(spec.noise_rate * day_span / 60.0))
        times = noise_rng.uniform(0.0, day_span, size=count)
        dev_picks = noise_rng.integers(0, len(device_ids), size=count)
        name_picks = noise_rng.integers(0, len(NOISE_ALARM_NAMES), size=count)
        blanks = noise_rng.random(size=count) < _NOISE_MISSING_NAME_RATE
        for k in range(count):
            name = "" if blanks[k] else NOISE_ALARM_NAMES[int(name_picks[k])]
            noise.append(
                (day * 86400.0 + start_h * 3600.0 + float(times[k]), device_ids[int(dev_picks[k])], name)
            )

    # Combine, sort globally, and hand out final record ids in sorted order.
    tagged: list[tuple[float, int, str, int, AlarmRecord | None, int]] = []
    counter = 0
    root_markers: dict[int, int] = {}  # counter index of each episode's root record
    for ep_idx, ep in enumerate(episodes):
        for j, rec in enumerate(ep.records):
            tagged.append((rec.timestamp, rec.device_id, rec.alarm_name, counter, rec, ep_idx))
            if j == 0:
                root_markers[ep_idx] = counter
            counter += 1
    for ts, dev, name in noise:
        rec = AlarmRecord(
            record_id=-1,
            timestamp=ts,
            device_id=dev,
            alarm_name=name,
            severity=severity_for_alarm(name, noise=True),
            extras=_extras_for(g, dev, extras_width),
        )
        tagged.append((ts, dev, name, counter, rec, -1))
        counter += 1

    tagged.sort(key=lambda t: (t[0], t[1], t[2], t[3]))
    final_records: list[AlarmRecord] = []
    new_id_of: dict[int, int] = {}
    for new_id, (_, _, _, marker, rec, _) in enumerate(tagged):
        assert rec is not None
        final_records.append(replace(rec, record_id=new_id))
        new_id_of[marker] = new_id

    labels = [(new_id_of[root_markers[i]], ep.cause_id) for i, ep in enumerate(episodes)]
    labels.sort()
    return AlarmLog.from_records(final_records), labels


def merge_scenarios(
    log_a: AlarmLog,
    labels_a: Sequence[tuple[int, int]],
    log_b: AlarmLog,
    labels_b: Sequence[tuple[int, int]],
) -> tuple[AlarmLog, list[tuple[int, int]]]:
    """Union two scenario logs, offsetting the second one's record ids."""
    offset = (max((r.record_id for r in log_a.records), default=-1)) + 1
    moved = [replace(r, record_id=r.record_id + offset) for r in log_b.records]
    merged = AlarmLog.from_records(list(log_a.records) + moved)
    labels = sorted(list(labels_a) + [(rid + offset, cid) for rid, cid in labels_b])
    return merged, labels


def _catalog(
    causes: list[RootCause],
    templates: dict[tuple[int, DeviceKind], tuple[str, ...]],
    hop_prob: float = 0.7,
    delay_mean: float = 4.0,
    delay_jitter: float = 2.5,
) -> FaultCatalog:
    cat = FaultCatalog(
        causes=tuple(causes),
        alarm_templates=templates,
        hop_prob=hop_prob,
        delay_mean=delay_mean,
        delay_jitter=delay_jitter,
    )
    cat.validate()
    return cat


CR = DeviceKind.CoreRouter
AS = DeviceKind.AggSwitch
BS = DeviceKind.BaseStation
SV = DeviceKind.Server


def default_catalog(hop_prob: float = 0.75) -> FaultCatalog:
    """Eight causes over the standard kinds, two of them Rare.

    Two cause pairs (4, 5) and (6, 7) are structural twins: same root kind,
    same root alarm, and the same overall alarm-name multiset — the twins
    differ only in which network tier carries which propagated name (the
    aggregation/core templates are swapped). Telling twins apart therefore
    requires relating an alarm's name to the device's position in the
    propagation structure; bag-of-alarms statistics are symmetric under the
    swap. Pair (6, 7) is Rare, so mixes that weight rare causes heavily make
    the structure-blind methods pay the most.
    """
    causes = [
        RootCause(0, "fan error", frozenset({SV, CR}), Rarity.Common),
        RootCause(1, "timestamp verification failed", frozenset({BS}), Rarity.Common),
        RootCause(2, "optical uplink degradation", frozenset({CR}), Rarity.Common),
        RootCause(3, "power distribution fault", frozenset({AS}), Rarity.Common),
        RootCause(4, "clock reference instability", frozenset({BS}), Rarity.Common),
        RootCause(5, "cell sync loss", frozenset({BS}), Rarity.Common),
        RootCause(6, "interference burst cascade", frozenset({BS}), Rarity.Rare),
        RootCause(7, "transient power brownout", frozenset({BS}), Rarity.Rare),
    ]
    templates: dict[tuple[int, DeviceKind], tuple[str, ...]] = {
        (0, SV): ("chassis fan failure", "temperature high"),
        (0, CR): ("chassis fan failure", "temperature high"),
        (0, AS): ("upstream thermal warning",),
        (1, BS): ("timestamp verification failed", "gps sync warning"),
        (1, AS): ("ntp drift detected",),
        (2, CR): ("carrier signal degraded", "crc errors rising"),
        (2, AS): ("link quality warning",),
        (2, BS): ("backhaul quality degraded",),
        (3, AS): ("power feed fluctuation", "voltage sag detected"),
        (3, BS): ("brownout reset warning",),
        (3, CR): ("line card power warning",),
        # Structural twins: identical names, AggSwitch/CoreRouter roles swapped.
        (4, BS): ("sync holdover entered",),
        (4, AS): ("timing loop alarm",),
        (4, CR): ("reference clock unstable",),
        (5, BS): ("sync holdover entered",),
        (5, AS): ("reference clock unstable",),
        (5, CR): ("timing loop alarm",),
        (6, BS): ("interference burst detected",),
        (6, AS): ("uplink noise rising",),
        (6, CR): ("backhaul jitter spike",),
        (7, BS): ("interference burst detected",),
        (7, AS): ("backhaul jitter spike",),
        (7, CR): ("uplink noise rising",),
    }
    return _catalog(causes, templates, hop_prob=hop_prob)


def separable_catalog(hop_prob: float = 1.0) -> FaultCatalog:
    """Eight causes with pairwise-disjoint alarm vocabularies (sanity regime)."""
    causes = [
        RootCause(0, "fan error", frozenset({SV, CR}), Rarity.Common),
        RootCause(1, "timestamp verification failed", frozenset({BS}), Rarity.Common),
        RootCause(2, "optical uplink degradation", frozenset({CR}), Rarity.Common),
        RootCause(3, "power distribution fault", frozenset({AS}), Rarity.Common),
        RootCause(4, "clock reference instability", frozenset({CR}), Rarity.Common),
        RootCause(5, "cell sync loss", frozenset({BS}), Rarity.Common),
        RootCause(6, "interference burst cascade", frozenset({BS}), Rarity.Rare),
        RootCause(7, "transient power brownout", frozenset({BS}), Rarity.Rare),
    ]
    templates: dict[tuple[int, DeviceKind], tuple[str, ...]] = {
        (0, SV): ("chassis fan failure", "temperature high"),
        (0, CR): ("chassis fan failure", "temperature high"),
        (1, BS): ("timestamp verification failed", "gps sync warning"),
        (2, CR): ("optical power low", "fec errors rising"),
        (3, AS): ("power feed fluctuation", "voltage sag detected"),
        (4, CR): ("reference clock unstable", "holdover entered"),
        (5, BS): ("cell sync lost", "rach preamble storm"),
        (6, BS): ("interference spike", "sinr collapse"),
        (7, BS): ("battery switchover", "rectifier undervoltage"),
    }
    return _catalog(causes, templates, hop_prob=hop_prob)


def catalog_to_json(catalog: FaultCatalog) -> str:
    payload = {
        "causes": [
            {
                "id": c.id,
                "name": c.name,
                "applicable_kinds": sorted(k.value for k in c.applicable_kinds),
                "rarity": c.rarity.value,
            }
            for c in catalog.causes
        ],
        "templates": [
            {"cause": cid, "kind": kind.value, "alarms": list(names)}
            for (cid, kind), names in sorted(
                catalog.alarm_templates.items(), key=lambda kv: (kv[0][0], kv[0][1].value)
            )
        ],
        "hop_prob": catalog.hop_prob,
        "delay_mean": catalog.delay_mean,
        "delay_jitter": catalog.delay_jitter,
    }
    return json.dumps(payload, indent=2)


def catalog_from_json(text: str) -> FaultCatalog:
    payload = json.loads(text)
    causes = tuple(
        RootCause(
            id=int(c["id"]),
            name=c["name"],
            applicable_kinds=frozenset(DeviceKind(k) for k in c["applicable_kinds"]),
            rarity=Rarity(c["rarity"]),
        )
        for c in payload["causes"]
    )
    templates = {
        (int(t["cause"]), DeviceKind(t["kind"])): tuple(t["alarms"]) for t in payload["templates"]
    }
    cat = FaultCatalog(
        causes=causes,
        alarm_templates=templates,
        hop_prob=float(payload["hop_prob"]),
        delay_mean=float(payload["delay_mean"]),
        delay_jitter=float(payload["delay_jitter"]),
    )
    cat.validate()
    return cat


def save_catalog(catalog: FaultCatalog, path: str | Path) -> None:
    Path(path).write_text(catalog_to_json(catalog), encoding="utf-8")


def load_catalog(path: str | Path) -> FaultCatalog:
    return catalog_from_json(Path(path).read_text(encoding="utf-8"))


def save_labels(labels: Iterable[tuple[int, int]], path: str | Path) -> None:
    lines = [f"{rid},{cid}" for rid, cid in labels]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_labels(path: str | Path) -> list[tuple[int, int]]:
    labels = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rid, cid = line.split(",")
        labels.append((int(rid), int(cid)))
    return labels
