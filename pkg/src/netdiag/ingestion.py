"""Alarm log model, parsing, cleaning, and diagnosis-window extraction.

Logs are line-delimited text with delimiter-separated columns. The first five
columns are fixed (record_id, timestamp, device_id, alarm_name, severity);
the remaining ones are free-form string extras whose names and count come from
the schema, so wide production exports stay representable.
"""

from __future__ import annotations

import bisect
import io
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import IO, Iterable, NamedTuple

DEFAULT_WINDOW_SECONDS = 300.0

ALL_DAY = "AllDay"
OFF_PEAK = "OffPeak"
PEAK = "Peak"
SCENARIO_NAMES = (ALL_DAY, OFF_PEAK, PEAK)

# Hour-of-day boundaries: OffPeak covers [0, 18), Peak covers [18, 24).
PEAK_START_HOUR = 18

CORE_COLUMNS = ("record_id", "timestamp", "device_id", "alarm_name", "severity")
DEFAULT_KEY_FIELDS = frozenset({"alarm_name", "device_id", "timestamp"})

_SEVERITY_RANK = {"Critical": 4, "Major": 3, "Minor": 2, "Warning": 1}


class Severity(Enum):
    Critical = "Critical"
    Major = "Major"
    Minor = "Minor"
    Warning = "Warning"

    @property
    def rank(self) -> int:
        return _SEVERITY_RANK[self.value]


def _default_extras() -> tuple[str, ...]:
    return tuple(f"x{i:02d}" for i in range(16))


@dataclass(frozen=True)
class LogSchema:
    extra_columns: tuple[str, ...] = field(default_factory=_default_extras)
    delimiter: str = "|"
    key_fields: frozenset[str] = DEFAULT_KEY_FIELDS

    def __post_init__(self) -> None:
        if len(self.delimiter) != 1 or self.delimiter in "\r\n":
            raise ValueError("delimiter must be a single non-newline character")
        if len(set(self.extra_columns)) != len(self.extra_columns):
            raise ValueError("duplicate extra column names")
        for name in self.extra_columns:
            if name in CORE_COLUMNS:
                raise ValueError(f"extra column shadows core column: {name}")
        unknown = set(self.key_fields) - set(self.columns)
        if unknown:
            raise ValueError(f"key fields not in schema: {sorted(unknown)}")

    @property
    def columns(self) -> tuple[str, ...]:
        return CORE_COLUMNS + self.extra_columns

    def to_json_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "key_fields": sorted(self.key_fields),
            "delimiter": self.delimiter,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "LogSchema":
        cols = tuple(payload["columns"])
        if cols[: len(CORE_COLUMNS)] != CORE_COLUMNS:
            raise ValueError("schema must start with the core columns")
        return cls(
            extra_columns=cols[len(CORE_COLUMNS) :],
            delimiter=payload.get("delimiter", "|"),
            key_fields=frozenset(payload.get("key_fields", sorted(DEFAULT_KEY_FIELDS))),
        )


DEFAULT_SCHEMA = LogSchema()


@dataclass(frozen=True)
class AlarmRecord:
    record_id: int
    timestamp: float
    device_id: int
    alarm_name: str
    severity: Severity
    extras: tuple[str, ...] = ()

    def field_value(self, name: str, schema: LogSchema = DEFAULT_SCHEMA) -> object:
        if name == "record_id":
            return self.record_id
        if name == "timestamp":
            return self.timestamp
        if name == "device_id":
            return self.device_id
        if name == "alarm_name":
            return self.alarm_name
        if name == "severity":
            return self.severity.value
        try:
            idx = schema.extra_columns.index(name)
        except ValueError:
            raise KeyError(f"unknown field: {name}") from None
        return self.extras[idx] if idx < len(self.extras) else ""

    def field_present(self, name: str, schema: LogSchema = DEFAULT_SCHEMA) -> bool:
        value = self.field_value(name, schema)
        return value != "" and value is not None


@dataclass(frozen=True)
class AlarmLog:
    """Alarm records kept sorted by (timestamp, record_id); ids are unique."""

    records: tuple[AlarmRecord, ...]

    def __post_init__(self) -> None:
        seen: set[int] = set()
        prev: tuple[float, int] | None = None
        for r in self.records:
            if r.record_id in seen:
                raise ValueError(f"duplicate record_id: {r.record_id}")
            seen.add(r.record_id)
            if r.timestamp < 0:
                raise ValueError(f"negative timestamp on record {r.record_id}")
            key = (r.timestamp, r.record_id)
            if prev is not None and key < prev:
                raise ValueError("records out of (timestamp, record_id) order")
            prev = key

    @classmethod
    def from_records(cls, records: Iterable[AlarmRecord]) -> "AlarmLog":
        return cls(records=tuple(sorted(records, key=lambda r: (r.timestamp, r.record_id))))

    @cached_property
    def by_id(self) -> dict[int, AlarmRecord]:
        return {r.record_id: r for r in self.records}

    @cached_property
    def timestamps(self) -> list[float]:
        return [r.timestamp for r in self.records]

    def record(self, record_id: int) -> AlarmRecord:
        try:
            return self.by_id[record_id]
        except KeyError:
            raise ValueError(f"record_id not in log: {record_id}") from None

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass(frozen=True)
class DiagnosisSample:
    """Alarm records within a time window around one root alarm."""

    records: tuple[AlarmRecord, ...]
    root_record: int
    label: int | None = None

    def root(self) -> AlarmRecord:
        for r in self.records:
            if r.record_id == self.root_record:
                return r
        raise ValueError(f"root record {self.root_record} missing from sample")

    def device_ids(self) -> set[int]:
        return {r.device_id for r in self.records}


class ParseResult(NamedTuple):
    log: AlarmLog
    skipped: int


def _read_text(source: str | Path | bytes | IO) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes().decode("utf-8")
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


def format_record(rec: AlarmRecord, schema: LogSchema = DEFAULT_SCHEMA) -> str:
    if len(rec.extras) != len(schema.extra_columns):
        raise ValueError(
            f"record {rec.record_id} has {len(rec.extras)} extras, schema wants {len(schema.extra_columns)}"
        )
    fields = [
        str(rec.record_id),
        repr(rec.timestamp),
        str(rec.device_id),
        rec.alarm_name,
        rec.severity.value,
        *rec.extras,
    ]
    for f_ in fields:
        if schema.delimiter in f_ or "\n" in f_ or "\r" in f_:
            raise ValueError(f"field contains delimiter or newline: {f_!r}")
    return schema.delimiter.join(fields)


def write_log(log: AlarmLog, target: str | Path | IO, schema: LogSchema = DEFAULT_SCHEMA, header: bool = True) -> None:
    lines = []
    if header:
        lines.append(schema.delimiter.join(schema.columns))
    for rec in log.records:
        lines.append(format_record(rec, schema))
    text = "\n".join(lines) + ("\n" if lines else "")
    if isinstance(target, (str, Path)):
        Path(target).write_bytes(text.encode("utf-8"))
    elif isinstance(target, io.TextIOBase):
        target.write(text)
    else:
        target.write(text.encode("utf-8"))


def parse_log(source: str | Path | bytes | IO, schema: LogSchema = DEFAULT_SCHEMA, header: bool = True) -> ParseResult:
    """Parse a delimited alarm log; malformed lines are skipped and counted.

    Aborts when more than half of the data lines fail to parse, which almost
    always means the schema or delimiter is wrong rather than the data dirty.
    """
    text = _read_text(source)
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if header and lines:
        expected = schema.delimiter.join(schema.columns)
        if lines[0] != expected:
            raise ValueError("header line does not match schema")
        lines = lines[1:]
    n_cols = len(schema.columns)
    records: list[AlarmRecord] = []
    seen_ids: set[int] = set()
    skipped = 0
    for line in lines:
        parts = line.split(schema.delimiter)
        if len(parts) != n_cols:
            skipped += 1
            continue
        try:
            rid = int(parts[0])
            ts = float(parts[1])
            dev = int(parts[2])
            sev = Severity(parts[4])
        except (ValueError, KeyError):
            skipped += 1
            continue
        if ts < 0 or rid in seen_ids:
            skipped += 1
            continue
        seen_ids.add(rid)
        records.append(
            AlarmRecord(
                record_id=rid,
                timestamp=ts,
                device_id=dev,
                alarm_name=parts[3],
                severity=sev,
                extras=tuple(parts[5:]),
            )
        )
    total = len(records) + skipped
    if total > 0 and skipped > total / 2:
        raise ValueError(f"{skipped} of {total} lines malformed; schema mismatch suspected")
    return ParseResult(AlarmLog.from_records(records), skipped)


def clean(log: AlarmLog, key_fields: frozenset[str] | set[str] | None = None, schema: LogSchema = DEFAULT_SCHEMA) -> AlarmLog:
    """Drop records missing any key field. Idempotent, order preserving."""
    keys = schema.key_fields if key_fields is None else frozenset(key_fields)
    unknown = keys - set(schema.columns)
    if unknown:
        raise ValueError(f"unknown key fields: {sorted(unknown)}")
    kept = tuple(r for r in log.records if all(r.field_present(k, schema) for k in keys))
    return AlarmLog(records=kept)


def extract_sample(log: AlarmLog, root_record: int, window_seconds: float = DEFAULT_WINDOW_SECONDS) -> DiagnosisSample:
    """Records within [root - window, root + window], both endpoints inclusive."""
    if window_seconds < 0:
        raise ValueError("window_seconds must be >= 0")
    root = log.record(root_record)
    lo = bisect.bisect_left(log.timestamps, root.timestamp - window_seconds)
    hi = bisect.bisect_right(log.timestamps, root.timestamp + window_seconds)
    return DiagnosisSample(records=log.records[lo:hi], root_record=root_record, label=None)


def hour_of(timestamp: float) -> int:
    return int(timestamp % 86400.0) // 3600


def scenario_of_timestamp(timestamp: float) -> str:
    return PEAK if hour_of(timestamp) >= PEAK_START_HOUR else OFF_PEAK


def split_by_scenario(
    log: AlarmLog,
    labels: Iterable[tuple[int, int]],
    window_seconds: float = DEFAULT_WINDOW_SECONDS,
) -> dict[str, list[DiagnosisSample]]:
    """Build labeled samples and bucket them by the root record's hour of day.

    AllDay is the union bucket: every sample lands there plus in exactly one
    of OffPeak ([0,18)) or Peak ([18,24)).
    """
    buckets: dict[str, list[DiagnosisSample]] = {ALL_DAY: [], OFF_PEAK: [], PEAK: []}
    for rid, cause_id in labels:
        root = log.record(rid)  # raises on dangling label
        sample = replace(extract_sample(log, rid, window_seconds), label=int(cause_id))
        buckets[ALL_DAY].append(sample)
        buckets[scenario_of_timestamp(root.timestamp)].append(sample)
    return buckets


def save_schema(schema: LogSchema, path: str | Path) -> None:
    import json

    Path(path).write_text(json.dumps(schema.to_json_dict(), indent=2), encoding="utf-8")


def load_schema(path: str | Path) -> LogSchema:
    import json

    return LogSchema.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))
