"""Acyclic probabilistic model of legitimate behaviour, learned by counting.

Nodes are categories; a node's states are the (user, src, dst) tuples seen
for it.  Each event is one experience: it increments one row of its node's
conditional table, the row being selected by the states of the event's
nearest predecessor in each parent category.  Parents with no predecessor
are simply left out of the row key, i.e. "absent" is itself evidence.

Probabilities are never stored, only counts, and are recovered as
``(count + alpha) / (row_total + alpha * |states|)``.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .activity_graph import HOUR_MS, ActivityGraph, MergedGraph, build_activity_graph, run_lengths
from .events import NormalizedEvent, State
from .ontology import Category, parse_category

FORMAT_VERSION = 1
TEMPORAL_BINS = 21

Config = tuple[tuple[str, State], ...]
Link = tuple[Category, Category]


class LearnError(ValueError):
    pass


class UnknownNode(KeyError):
    pass


class VersionError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass
class ModelNode:
    category: Category
    states: Counter = field(default_factory=Counter)
    last_seen: dict = field(default_factory=dict)
    parents: set = field(default_factory=set)
    looped: bool = False
    recurrence: Counter = field(default_factory=Counter)
    rows: dict = field(default_factory=dict)


@dataclass
class BehaviorModel:
    alpha: float = 1.0
    horizon_ms: int = HOUR_MS
    nodes: dict[Category, ModelNode] = field(default_factory=dict)
    arcs: set = field(default_factory=set)
    removed: dict = field(default_factory=dict)
    traversals: Counter = field(default_factory=Counter)
    temporal: dict = field(default_factory=dict)
    total_experiences: int = 0
    frozen: bool = False

    def freeze(self) -> "BehaviorModel":
        self.frozen = True
        return self

    def known_link(self, a: Category, b: Category) -> bool:
        return (a, b) in self.arcs or (a, b) in self.removed

    def state_count(self) -> int:
        return sum(len(n.states) for n in self.nodes.values())

    def children(self) -> dict[Category, list[Category]]:
        out: dict[Category, list[Category]] = {c: [] for c in self.nodes}
        for a, b in self.arcs:
            out[a].append(b)
        return out

    def _reaches(self, start: Category, goal: Category) -> bool:
        children = self.children()
        stack, seen = [start], {start}
        while stack:
            cur = stack.pop()
            if cur == goal:
                return True
            for nxt in children.get(cur, ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return False

    def add_node(self, cat: Category, looped: bool = False) -> ModelNode:
        node = self.nodes.get(cat)
        if node is None:
            node = self.nodes[cat] = ModelNode(cat, looped=looped)
        return node

    def add_arc(self, a: Category, b: Category, count: int = 0) -> bool:
        """Add a causal arc unless it would close a cycle; returns True if kept."""
        if self.known_link(a, b):
            return (a, b) in self.arcs
        if a == b:
            raise ValueError("self arcs are represented by loop marks")
        if self._reaches(b, a):
            self.removed[(a, b)] = count
            return False
        self.arcs.add((a, b))
        self.nodes[b].parents.add(a)
        return True

    def topological_order(self) -> list[Category]:
        indeg = {c: len(n.parents) for c, n in self.nodes.items()}
        children = self.children()
        ready = sorted((c for c, d in indeg.items() if d == 0), key=str)
        order = []
        while ready:
            cur = ready.pop(0)
            order.append(cur)
            for nxt in sorted(children[cur], key=str):
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    ready.append(nxt)
            ready.sort(key=str)
        if len(order) != len(self.nodes):
            raise ValueError("model graph has a cycle")
        return order


def _arc_label(link: Link) -> str:
    return f"{link[0]} -> {link[1]}"


def build_structure(merged: MergedGraph, alpha: float = 1.0, horizon_ms: int = HOUR_MS) -> BehaviorModel:
    """Turn a merged graph into an untrained acyclic model.

    Arcs are admitted from the most to the least traversed (ties: smaller
    label first); an arc that would close a cycle is recorded in
    ``removed`` instead.  Each removed arc is therefore the weakest arc of
    some cycle.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    model = BehaviorModel(alpha=alpha, horizon_ms=horizon_ms)
    for cat in sorted(merged.nodes, key=str):
        model.add_node(cat, looped=merged.nodes[cat].looped)
    for link, count in sorted(merged.arcs.items(), key=lambda kv: (-kv[1], _arc_label(kv[0]))):
        model.add_arc(link[0], link[1], count)
    return model


def temporal_bin(gap_ms: int) -> int:
    """Log-scaled duration bin: bin k holds gaps in [2^k, 2^(k+1)) seconds."""
    seconds = gap_ms / 1000.0
    if seconds < 2.0:
        return 0
    return min(int(math.floor(math.log2(seconds))), TEMPORAL_BINS - 1)


def parent_config(model: BehaviorModel, cat: Category, preds: Iterable[NormalizedEvent]) -> Config:
    parents = model.nodes[cat].parents
    nearest: dict[Category, NormalizedEvent] = {}
    for p in preds:
        pc = p.category
        if pc in parents:
            cur = nearest.get(pc)
            if cur is None or p.order_key() > cur.order_key():
                nearest[pc] = p
    return tuple(sorted((str(c), e.state) for c, e in nearest.items()))


# -- learning ---------------------------------------------------------------


@dataclass(frozen=True)
class StepSnapshot:
    step: int
    nodes: int
    links: int
    states: int


def plateau_step(counts: Sequence[int], tolerance: float = 0.01, span: int = 10) -> Optional[int]:
    """First 1-based step after which relative growth stays below tolerance for `span` steps."""
    n = len(counts)
    for s in range(1, n - span + 1):
        ok = True
        for k in range(s, s + span):
            prev = counts[k - 1]
            if (counts[k] - prev) / max(prev, 1) >= tolerance:
                ok = False
                break
        if ok:
            return s
    return None


@dataclass
class TrainingReport:
    steps: list[StepSnapshot]
    plateau_tolerance: float = 0.01
    plateau_span: int = 10

    @property
    def stationary_step(self) -> dict[str, Optional[int]]:
        return {
            feature: plateau_step([getattr(s, feature) for s in self.steps],
                                  self.plateau_tolerance, self.plateau_span)
            for feature in ("nodes", "links", "states")
        }

    def to_csv(self) -> str:
        rows = ["step,nodes,links,states"]
        rows += [f"{s.step},{s.nodes},{s.links},{s.states}" for s in self.steps]
        return "\n".join(rows) + "\n"


def learn(
    model: BehaviorModel,
    events: Sequence[NormalizedEvent],
    steps: int = 1,
    only: Optional[set[str]] = None,
    graph: Optional[ActivityGraph] = None,
) -> TrainingReport:
    """Replay events through their correlation chains, counting experiences.

    ``only`` restricts which events count as experiences; the others still
    provide predecessor context.  A snapshot of the observed node, link and
    state counts is taken at the end of each of ``steps`` equal slices.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    g = graph if graph is not None else build_activity_graph(events, model.horizon_ms)
    evs = g.events
    n = len(evs)
    bounds: dict[int, list[int]] = {}
    for k in range(steps):
        bounds.setdefault(round((k + 1) * n / steps), []).append(k + 1)
    length, ends = run_lengths(g)
    seen_nodes: set = set()
    seen_links: set = set()
    seen_states: set = set()
    snapshots: list[StepSnapshot] = []

    def snap(step: int) -> None:
        snapshots.append(StepSnapshot(step, len(seen_nodes), len(seen_links), len(seen_states)))

    for step in bounds.get(0, []):
        snap(step)

    for j, e in enumerate(evs):
        if only is None or e.event_id in only:
            _experience(model, g, j, e, ends[j], length[j])
            seen_nodes.add(e.category)
            seen_states.add((e.category, e.state))
            for i in g.preds[j]:
                pc = evs[i].category
                if pc != e.category:
                    seen_links.add((pc, e.category))
        for step in bounds.get(j + 1, ()):
            snap(step)
    return TrainingReport(snapshots)


def _experience(model: BehaviorModel, g: ActivityGraph, j: int, e: NormalizedEvent,
                run_ends: bool, run_length: int) -> None:
    cat = e.category
    node = model.nodes.get(cat)
    if node is None:
        if model.frozen:
            raise LearnError(f"category {cat} is not in the frozen model")
        node = model.add_node(cat)
    preds = [g.events[i] for i in g.preds[j]]
    for p in preds:
        pc = p.category
        if pc == cat:
            if not node.looped and model.frozen:
                raise LearnError(f"recurrence on {cat} is not in the frozen model")
            node.looped = True
            continue
        if not model.known_link(pc, cat):
            if model.frozen:
                raise LearnError(f"link {pc} -> {cat} is not in the frozen model")
            model.add_node(pc)
            model.add_arc(pc, cat)
        model.traversals[(pc, cat)] += 1
        bins = model.temporal.setdefault((pc, cat), [0] * TEMPORAL_BINS)
        bins[temporal_bin(e.time - p.time)] += 1
    if run_ends:
        node.recurrence[run_length] += 1
    config = parent_config(model, cat, preds)
    state = e.state
    row = node.rows.get(config)
    if row is None:
        row = node.rows[config] = Counter()
    row[state] += 1
    node.states[state] += 1
    node.last_seen[state] = model.total_experiences
    model.total_experiences += 1


def train(
    events: Sequence[NormalizedEvent],
    alpha: float = 1.0,
    horizon_ms: int = HOUR_MS,
    steps: int = 1,
) -> tuple[BehaviorModel, TrainingReport]:
    """Merged-graph structure followed by counting-learning, then frozen."""
    from .activity_graph import merge

    g = build_activity_graph(events, horizon_ms)
    model = build_structure(merge(g), alpha=alpha, horizon_ms=horizon_ms)
    report = learn(model, g.events, steps=steps, graph=g)
    return model.freeze(), report


# -- queries ----------------------------------------------------------------


def row_probability(model: BehaviorModel, cat: Category, config: Config, state: State) -> float:
    node = model.nodes.get(cat)
    if node is None:
        raise UnknownNode(str(cat))
    k = len(node.states)
    row = node.rows.get(config)
    total = sum(row.values()) if row else 0
    count = row.get(state, 0) if row else 0
    alpha = model.alpha
    denom = total + alpha * k
    if denom == 0:
        return 0.0
    return (count + alpha) / denom


def query(model: BehaviorModel, event: NormalizedEvent, predecessors: Sequence[NormalizedEvent] = ()) -> float:
    """Probability of the event's state given its predecessors' states as evidence."""
    if event.category not in model.nodes:
        raise UnknownNode(str(event.category))
    config = parent_config(model, event.category, predecessors)
    return row_probability(model, event.category, config, event.state)


def query_temporal(model: BehaviorModel, arc: Link, gap_ms: int) -> float:
    if not model.known_link(*arc):
        raise KeyError(f"unknown arc {_arc_label(arc)}")
    bins = model.temporal.get(arc, [0] * TEMPORAL_BINS)
    total = sum(bins)
    denom = total + model.alpha * TEMPORAL_BINS
    if denom == 0:
        return 0.0
    return (bins[temporal_bin(gap_ms)] + model.alpha) / denom


def prune_stale(model: BehaviorModel, max_unused_experiences: int) -> int:
    """Drop node states unseen for more than the given number of experiences."""
    now = model.total_experiences
    dropped = 0
    for cat in sorted(model.nodes, key=str):
        node = model.nodes[cat]
        stale = {s for s, last in node.last_seen.items() if now - last > max_unused_experiences}
        if not stale:
            continue
        dropped += len(stale)
        for s in stale:
            del node.states[s]
            del node.last_seen[s]
        for config in list(node.rows):
            row = node.rows[config]
            for s in stale & row.keys():
                del row[s]
            if not row:
                del node.rows[config]
        # rows of children keyed on a dropped parent state can never match again
        key = str(cat)
        for child in model.nodes.values():
            if cat not in child.parents:
                continue
            for config in list(child.rows):
                if any(p == key and s in stale for p, s in config):
                    del child.rows[config]
    return dropped


# -- persistence ------------------------------------------------------------


def _state_json(s: State) -> list:
    return list(s)


def _state_from(obj) -> State:
    if not isinstance(obj, list) or len(obj) != 3:
        raise ModelFormatError(f"bad state {obj!r}")
    return tuple(obj)  # type: ignore[return-value]


def _sortkey(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def model_to_dict(model: BehaviorModel) -> dict:
    nodes = []
    for cat in sorted(model.nodes, key=str):
        node = model.nodes[cat]
        states = sorted(
            ([*_state_json(s), c, node.last_seen.get(s, 0)] for s, c in node.states.items()),
            key=_sortkey,
        )
        rows = []
        for config, row in node.rows.items():
            rows.append({
                "config": [[p, _state_json(s)] for p, s in config],
                "counts": sorted(([*_state_json(s), c] for s, c in row.items()), key=_sortkey),
            })
        rows.sort(key=lambda r: _sortkey(r["config"]))
        nodes.append({
            "category": str(cat),
            "looped": node.looped,
            "parents": sorted(str(p) for p in node.parents),
            "states": states,
            "recurrence": sorted([k, v] for k, v in node.recurrence.items()),
            "rows": rows,
        })
    return {
        "format_version": FORMAT_VERSION,
        "alpha": model.alpha,
        "node_count": len(model.nodes),
        "arc_count": len(model.arcs),
        "horizon_ms": model.horizon_ms,
        "total_experiences": model.total_experiences,
        "frozen": model.frozen,
        "nodes": nodes,
        "arcs": sorted([str(a), str(b), model.traversals.get((a, b), 0)] for a, b in model.arcs),
        "removed": sorted([str(a), str(b), c] for (a, b), c in model.removed.items()),
        "temporal": sorted([str(a), str(b), list(bins)] for (a, b), bins in model.temporal.items()),
        "removed_traversals": sorted(
            [str(a), str(b), c] for (a, b), c in model.traversals.items() if (a, b) in model.removed
        ),
    }


def dumps_model(model: BehaviorModel) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":")) + "\n"


def model_from_dict(obj: dict) -> BehaviorModel:
    if not isinstance(obj, dict) or "format_version" not in obj:
        raise ModelFormatError("missing header")
    version = obj["format_version"]
    if not isinstance(version, int) or version > FORMAT_VERSION:
        raise VersionError(f"unsupported model format version {version!r}")
    try:
        model = BehaviorModel(alpha=float(obj["alpha"]), horizon_ms=int(obj["horizon_ms"]))
        model.total_experiences = int(obj["total_experiences"])
        cats: dict[str, Category] = {}

        def cat_of(s: str) -> Category:
            if s not in cats:
                cats[s] = parse_category(s)
            return cats[s]

        for nd in obj["nodes"]:
            cat = cat_of(nd["category"])
            node = model.add_node(cat, looped=bool(nd["looped"]))
            for *st, count, last in nd["states"]:
                s = _state_from(st)
                node.states[s] = count
                node.last_seen[s] = last
            node.recurrence = Counter({k: v for k, v in nd["recurrence"]})
            for r in nd["rows"]:
                config = tuple((p, _state_from(s)) for p, s in r["config"])
                node.rows[config] = Counter({_state_from(c[:3]): c[3] for c in r["counts"]})
            node.parents = {cat_of(p) for p in nd["parents"]}
        for a, b, t in obj["arcs"]:
            link = (cat_of(a), cat_of(b))
            model.arcs.add(link)
            if t:
                model.traversals[link] = t
        for a, b, c in obj["removed"]:
            model.removed[(cat_of(a), cat_of(b))] = c
        for a, b, t in obj.get("removed_traversals", []):
            model.traversals[(cat_of(a), cat_of(b))] = t
        for a, b, bins in obj["temporal"]:
            if len(bins) != TEMPORAL_BINS:
                raise ModelFormatError("temporal row has the wrong number of bins")
            model.temporal[(cat_of(a), cat_of(b))] = list(bins)
        model.frozen = bool(obj["frozen"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (VersionError, ModelFormatError)):
            raise
        raise ModelFormatError(f"malformed model: {exc}") from exc
    if obj["node_count"] != len(model.nodes) or obj["arc_count"] != len(model.arcs):
        raise ModelFormatError("header counts do not match body")
    return model


def save_model(model: BehaviorModel, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps_model(model), encoding="utf-8")


def load_model(path: Union[str, Path]) -> BehaviorModel:
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"cannot decode model file: {exc.msg}") from exc
    return model_from_dict(obj)
