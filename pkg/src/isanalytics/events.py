"""Normalized event records, signature-table ingestion and corpus statistics.

The record is a trimmed IDMEF alert whose Classification is an ontology
category.  Raw records are tab-separated lines::

    analyzer <TAB> signature <TAB> create_time_ms <TAB> field3 <TAB> ...

and a mapping table assigns each (analyzer, signature) pair a category plus
the positions of the identity attributes in the raw record.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

from .ontology import Category, ParseError, VocabularyTable, default_vocabulary, parse_category

State = tuple[Optional[str], Optional[str], Optional[str]]

EVENT_FIELDS = ("id", "analyzer", "create_time", "detect_time", "src", "dst", "user", "category", "additional")
ATTRIBUTE_NAMES = ("id", "user", "src", "dst", "detect_time")


class IngestError(OSError):
    pass


class MappingError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class FormatError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class EventInvariantError(ValueError):
    pass


@dataclass(frozen=True)
class NormalizedEvent:
    event_id: str
    analyzer: str
    create_time: int
    category: Category
    detect_time: Optional[int] = None
    src: Optional[str] = None
    dst: Optional[str] = None
    user: Optional[str] = None
    additional: dict[str, str] = field(default_factory=dict, compare=True, hash=False)

    def __post_init__(self):
        if self.src is None and self.user is None:
            raise EventInvariantError(f"event {self.event_id}: needs a source address or a user")
        if self.detect_time is not None and self.detect_time < self.create_time:
            raise EventInvariantError(f"event {self.event_id}: detect_time precedes create_time")

    @property
    def time(self) -> int:
        """Ordering timestamp: detection time when known, else creation time."""
        return self.detect_time if self.detect_time is not None else self.create_time

    @property
    def state(self) -> State:
        return (self.user, self.src, self.dst)

    def order_key(self) -> tuple[int, str]:
        return (self.time, self.event_id)


def order_events(events: Iterable[NormalizedEvent]) -> list[NormalizedEvent]:
    return sorted(events, key=NormalizedEvent.order_key)


# -- mapping tables and ingestion -------------------------------------------


@dataclass(frozen=True)
class MappingEntry:
    category: Category
    attrs: tuple[tuple[str, int], ...]


@dataclass(frozen=True)
class MappingTable:
    entries: dict[tuple[str, str], MappingEntry]

    def lookup(self, analyzer: str, signature: str) -> Optional[MappingEntry]:
        return self.entries.get((analyzer, signature))

    def __len__(self) -> int:
        return len(self.entries)


def _parse_attr_spec(spec: str, lineno: int) -> tuple[tuple[str, int], ...]:
    spec = spec.strip()
    if not spec or spec == "-":
        return ()
    out = []
    for item in spec.split(","):
        name, _, pos = item.partition("=")
        name = name.strip()
        if name not in ATTRIBUTE_NAMES:
            raise MappingError(lineno, f"unknown attribute {name!r}")
        try:
            index = int(pos)
        except ValueError:
            raise MappingError(lineno, f"bad field position {pos!r}") from None
        if index < 3:
            raise MappingError(lineno, "attribute positions start after the time field (>= 3)")
        out.append((name, index))
    return tuple(out)


def parse_mapping(lines: Iterable[str], vocab: Optional[VocabularyTable] = None) -> MappingTable:
    entries: dict[tuple[str, str], MappingEntry] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise MappingError(lineno, f"expected 4 tab-separated fields, got {len(parts)}")
        analyzer, signature, cat, spec = parts
        try:
            category = parse_category(cat, vocab)
        except ParseError as exc:
            raise MappingError(lineno, f"invalid category: {exc}") from exc
        key = (analyzer, signature)
        if key in entries:
            raise MappingError(lineno, f"duplicate pattern {signature!r} for analyzer {analyzer!r}")
        entries[key] = MappingEntry(category, _parse_attr_spec(spec, lineno))
    return MappingTable(entries)


def load_mapping(path: Union[str, Path], vocab: Optional[VocabularyTable] = None) -> MappingTable:
    with open(path, encoding="utf-8") as fh:
        return parse_mapping(fh, vocab)


def write_mapping(table: MappingTable, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (analyzer, signature), entry in sorted(table.entries.items()):
            spec = ",".join(f"{n}={i}" for n, i in entry.attrs) or "-"
            fh.write(f"{analyzer}\t{signature}\t{entry.category}\t{spec}\n")


@dataclass(frozen=True)
class RejectRecord:
    index: int
    line: str
    reason: str


def _blank(value: str) -> Optional[str]:
    value = value.strip()
    return None if value in ("", "-") else value


def ingest(lines: Sequence[str], table: MappingTable) -> tuple[list[NormalizedEvent], list[RejectRecord]]:
    """Normalize raw records through the mapping table.

    Every input record ends up in exactly one of the two outputs; per-record
    problems never abort the batch.
    """
    events: list[NormalizedEvent] = []
    rejects: list[RejectRecord] = []
    for index, raw in enumerate(lines):
        line = raw.rstrip("\r\n")
        fields = line.split("\t")
        if len(fields) < 3:
            rejects.append(RejectRecord(index, line, "malformed"))
            continue
        entry = table.lookup(fields[0], fields[1])
        if entry is None:
            rejects.append(RejectRecord(index, line, "unmatched"))
            continue
        try:
            create_time = int(fields[2])
        except ValueError:
            rejects.append(RejectRecord(index, line, "bad-timestamp"))
            continue
        attrs: dict[str, Optional[str]] = {}
        for name, pos in entry.attrs:
            attrs[name] = _blank(fields[pos]) if pos < len(fields) else None
        if attrs.get("src") is None and attrs.get("user") is None:
            rejects.append(RejectRecord(index, line, "uncorrelatable"))
            continue
        detect_time = None
        if attrs.get("detect_time") is not None:
            try:
                detect_time = int(attrs["detect_time"])
            except ValueError:
                rejects.append(RejectRecord(index, line, "bad-timestamp"))
                continue
        try:
            events.append(NormalizedEvent(
                event_id=attrs.get("id") or f"{fields[0]}:{index}",
                analyzer=fields[0],
                create_time=create_time,
                detect_time=detect_time,
                category=entry.category,
                src=attrs.get("src"),
                dst=attrs.get("dst"),
                user=attrs.get("user"),
                additional={"signature": fields[1]},
            ))
        except EventInvariantError:
            rejects.append(RejectRecord(index, line, "invariant"))
    return events, rejects


def ingest_file(path: Union[str, Path], table: MappingTable) -> tuple[list[NormalizedEvent], list[RejectRecord]]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc
    return ingest(lines, table)


# -- corpus statistics ------------------------------------------------------


@dataclass(frozen=True)
class CorpusStats:
    raw_count: int
    category_count: int
    per_category_counts: dict[Category, int]
    singleton_count: int
    reduction_rate: float

    @property
    def singleton_share(self) -> float:
        """Fraction of categories holding a single raw signature."""
        return self.singleton_count / self.category_count if self.category_count else 0.0


def corpus_stats(events: Iterable[NormalizedEvent], raw_signature_count: int) -> CorpusStats:
    counts = Counter(e.category for e in events)
    if raw_signature_count < len(counts):
        raise ValueError("raw_signature_count is smaller than the number of distinct categories")
    reduction = 1.0 - len(counts) / raw_signature_count if raw_signature_count > 0 else 0.0
    return CorpusStats(
        raw_count=raw_signature_count,
        category_count=len(counts),
        per_category_counts=dict(counts),
        singleton_count=sum(1 for c in counts.values() if c == 1),
        reduction_rate=reduction,
    )


# -- JSON-lines event files -------------------------------------------------


def event_to_dict(e: NormalizedEvent) -> dict[str, Any]:
    return {
        "id": e.event_id,
        "analyzer": e.analyzer,
        "create_time": e.create_time,
        "detect_time": e.detect_time,
        "src": e.src,
        "dst": e.dst,
        "user": e.user,
        "category": str(e.category),
        "additional": dict(e.additional),
    }


def dumps_event(e: NormalizedEvent) -> str:
    return json.dumps(event_to_dict(e), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _opt_str(obj: dict, key: str, lineno: int) -> Optional[str]:
    v = obj.get(key)
    if v is not None and not isinstance(v, str):
        raise FormatError(lineno, f"field {key!r} must be a string or null")
    return v


def _timestamp(obj: dict, key: str, lineno: int, required: bool) -> Optional[int]:
    v = obj.get(key)
    if v is None and not required:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise FormatError(lineno, f"malformed timestamp in {key!r}: {v!r}")
    return v


def event_from_dict(obj: Any, lineno: int = 0, vocab: Optional[VocabularyTable] = None) -> NormalizedEvent:
    if not isinstance(obj, dict):
        raise FormatError(lineno, "expected a JSON object")
    missing = [k for k in EVENT_FIELDS if k not in obj]
    if missing:
        raise FormatError(lineno, f"missing fields {missing}")
    if not isinstance(obj["id"], str) or not obj["id"]:
        raise FormatError(lineno, "event id must be a non-empty string")
    if not isinstance(obj["analyzer"], str):
        raise FormatError(lineno, "analyzer must be a string")
    if not isinstance(obj["category"], str):
        raise FormatError(lineno, "category must be a string")
    try:
        category = parse_category(obj["category"], vocab)
    except ParseError as exc:
        raise FormatError(lineno, f"bad category: {exc}") from exc
    additional = obj["additional"] or {}
    if not isinstance(additional, dict):
        raise FormatError(lineno, "additional must be an object")
    try:
        return NormalizedEvent(
            event_id=obj["id"],
            analyzer=obj["analyzer"],
            create_time=_timestamp(obj, "create_time", lineno, True),
            detect_time=_timestamp(obj, "detect_time", lineno, False),
            category=category,
            src=_opt_str(obj, "src", lineno),
            dst=_opt_str(obj, "dst", lineno),
            user=_opt_str(obj, "user", lineno),
            additional={str(k): str(v) for k, v in additional.items()},
        )
    except EventInvariantError as exc:
        raise FormatError(lineno, str(exc)) from exc


def write_events(events: Iterable[NormalizedEvent], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in events:
            fh.write(dumps_event(e))
            fh.write("\n")


def read_events(path: Union[str, Path], vocab: Optional[VocabularyTable] = None) -> list[NormalizedEvent]:
    vocab = vocab or default_vocabulary()
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(lineno, f"invalid JSON: {exc.msg}") from exc
            out.append(event_from_dict(obj, lineno, vocab))
    return out
