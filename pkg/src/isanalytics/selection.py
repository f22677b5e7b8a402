"""Checkpoint-based event selection.

A checkpoint is a class of events an attacker has to go through to reach
one of five effects.  Only events matching a checkpoint, on a component
where that checkpoint applies, are kept for modelling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fnmatch import fnmatchcase
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

from .activity_graph import MergedGraph
from .events import NormalizedEvent
from .ontology import Category

EFFECTS = ("UserToRoot", "RemoteToLocal", "DenialOfService", "MonitoringProbe", "AccessAlterData")
NATURES = ("workstation", "server", "router", "firewall", "authserver")
ZONES = ("LAN", "DMZ", "WAN")


class CheckpointError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class ContextError(ValueError):
    pass


@dataclass(frozen=True)
class ComponentDescriptor:
    nature: str
    zone: str
    importance: float = 0.5
    vulnerable: bool = False

    def __post_init__(self):
        if self.nature not in NATURES:
            raise ContextError(f"unknown component nature {self.nature!r}")
        if self.zone not in ZONES:
            raise ContextError(f"unknown zone {self.zone!r}")
        if not 0.0 <= self.importance <= 1.0:
            raise ContextError("importance must lie in [0, 1]")


Context = Mapping[str, ComponentDescriptor]


def load_context(path: Union[str, Path]) -> dict[str, ComponentDescriptor]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ContextError("context file must hold a JSON object")
    try:
        return {addr: ComponentDescriptor(**d) for addr, d in raw.items()}
    except TypeError as exc:
        raise ContextError(str(exc)) from exc


def dump_context(context: Context, path: Union[str, Path]) -> None:
    obj = {
        addr: {"nature": d.nature, "zone": d.zone, "importance": d.importance, "vulnerable": d.vulnerable}
        for addr, d in context.items()
    }
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class ContextRule:
    """Which components a checkpoint applies to; None means any value."""

    natures: Optional[frozenset[str]] = None
    zones: Optional[frozenset[str]] = None

    def admits(self, descriptor: Optional[ComponentDescriptor]) -> bool:
        if self.natures is None and self.zones is None:
            return True
        if descriptor is None:
            return False
        if self.natures is not None and descriptor.nature not in self.natures:
            return False
        return self.zones is None or descriptor.zone in self.zones


def parse_context_rule(text: str, lineno: int = 0) -> ContextRule:
    text = text.strip()
    if text == "*":
        return ContextRule()
    natures = zones = None
    for clause in text.split(";"):
        key, sep, values = clause.partition("=")
        if not sep:
            raise CheckpointError(lineno, f"bad context clause {clause!r}")
        vals = frozenset(v for v in values.strip().split("+") if v)
        key = key.strip()
        if key == "nature":
            if not vals <= set(NATURES):
                raise CheckpointError(lineno, f"unknown natures {sorted(vals - set(NATURES))}")
            natures = vals
        elif key == "zone":
            if not vals <= set(ZONES):
                raise CheckpointError(lineno, f"unknown zones {sorted(vals - set(ZONES))}")
            zones = vals
        else:
            raise CheckpointError(lineno, f"unknown context key {key!r}")
    return ContextRule(natures, zones)


@dataclass(frozen=True)
class Checkpoint:
    name: str
    patterns: tuple[str, ...]
    effects: frozenset[str]
    context: ContextRule

    def matches(self, category: Category) -> bool:
        return _matches(self.patterns, str(category))


@lru_cache(maxsize=None)
def _matches(patterns: tuple[str, ...], text: str) -> bool:
    return any(fnmatchcase(text, p) for p in patterns)


@dataclass(frozen=True)
class CheckpointTable:
    checkpoints: tuple[Checkpoint, ...]

    def __len__(self) -> int:
        return len(self.checkpoints)

    def covered_effects(self) -> set[str]:
        return {e for c in self.checkpoints for e in c.effects}

    def matching(self, category: Category) -> list[Checkpoint]:
        return [c for c in self.checkpoints if c.matches(category)]


def parse_checkpoints(lines: Iterable[str]) -> CheckpointTable:
    cps: list[Checkpoint] = []
    names: set[str] = set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise CheckpointError(lineno, f"expected 4 tab-separated fields, got {len(parts)}")
        name, pattern, effects, context = (p.strip() for p in parts)
        if name in names:
            raise CheckpointError(lineno, f"duplicate checkpoint {name!r}")
        names.add(name)
        effs = frozenset(e.strip() for e in effects.split(",") if e.strip())
        if not effs or not effs <= set(EFFECTS):
            raise CheckpointError(lineno, f"bad effect classes {effects!r}")
        patterns = tuple(p for p in pattern.split("|") if p)
        if not patterns:
            raise CheckpointError(lineno, "empty pattern")
        cps.append(Checkpoint(name, patterns, effs, parse_context_rule(context, lineno)))
    table = CheckpointTable(tuple(cps))
    missing = set(EFFECTS) - table.covered_effects()
    if missing:
        raise CheckpointError(0, f"effect classes without a checkpoint: {sorted(missing)}")
    return table


def load_checkpoints(path: Union[str, Path]) -> CheckpointTable:
    with open(path, encoding="utf-8") as fh:
        return parse_checkpoints(fh)


@lru_cache(maxsize=1)
def default_checkpoints() -> CheckpointTable:
    text = resources.files("isanalytics.data").joinpath("checkpoints.tsv").read_text("utf-8")
    return parse_checkpoints(text.splitlines())


def select_events(
    events: Iterable[NormalizedEvent],
    table: CheckpointTable,
    context: Optional[Context] = None,
) -> list[NormalizedEvent]:
    """Keep events matching a checkpoint that applies to their source component."""
    context = context or {}
    out = []
    for e in events:
        desc = context.get(e.src) if e.src is not None else None
        if any(cp.context.admits(desc) for cp in table.matching(e.category)):
            out.append(e)
    return out


filter_events = select_events


def reduction_report(before: MergedGraph, after: MergedGraph) -> dict[str, float]:
    def frac(b: int, a: int) -> float:
        return 1.0 - a / b if b else 0.0

    return {
        "node_reduction": frac(before.node_count, after.node_count),
        "link_reduction": frac(before.link_count, after.link_count),
    }
