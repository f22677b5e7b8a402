"""User-activity graphs and their contraction into per-category merged graphs."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .events import NormalizedEvent, order_events
from .ontology import Category

HOUR_MS = 3_600_000

RULE_SRC = "src"
RULE_USER = "user"
RULE_DST_SRC = "dst_src"
RULES = (RULE_SRC, RULE_USER, RULE_DST_SRC)


def correlated(a: NormalizedEvent, b: NormalizedEvent) -> bool:
    return bool(matching_rules(a, b))


def matching_rules(a: NormalizedEvent, b: NormalizedEvent) -> tuple[str, ...]:
    rules = []
    if a.src is not None and a.src == b.src:
        rules.append(RULE_SRC)
    if a.user is not None and a.user == b.user:
        rules.append(RULE_USER)
    if a.dst is not None and a.dst == b.src:
        rules.append(RULE_DST_SRC)
    return tuple(rules)


@dataclass(frozen=True)
class Arc:
    rules: tuple[str, ...]
    gap_ms: int


@dataclass
class ActivityGraph:
    """Events (in ordering-timestamp order) linked by correlation arcs.

    ``arcs`` maps (earlier index, later index) to the rules for which the
    earlier event is the nearest correlated predecessor.
    """

    events: list[NormalizedEvent]
    arcs: dict[tuple[int, int], Arc]
    preds: list[list[int]]

    def successors(self) -> list[list[int]]:
        succ: list[list[int]] = [[] for _ in self.events]
        for i, j in self.arcs:
            succ[i].append(j)
        return succ


def build_activity_graph(events: Iterable[NormalizedEvent], horizon_ms: int = HOUR_MS) -> ActivityGraph:
    """Link every event to its nearest preceding correlated event, per rule.

    Events are put in (time, event_id) order first.  An arc is only kept
    when the gap does not exceed ``horizon_ms``.
    """
    if horizon_ms <= 0:
        raise ValueError("horizon must be positive")
    evs = order_events(events)
    last_by_src: dict[str, int] = {}
    last_by_user: dict[str, int] = {}
    last_by_dst: dict[str, int] = {}
    arcs: dict[tuple[int, int], Arc] = {}
    preds: list[list[int]] = []

    for j, b in enumerate(evs):
        found: dict[int, list[str]] = {}
        if b.src is not None:
            i = last_by_src.get(b.src)
            if i is not None:
                found.setdefault(i, []).append(RULE_SRC)
        if b.user is not None:
            i = last_by_user.get(b.user)
            if i is not None:
                found.setdefault(i, []).append(RULE_USER)
        if b.src is not None:
            i = last_by_dst.get(b.src)
            if i is not None:
                found.setdefault(i, []).append(RULE_DST_SRC)
        mine = []
        t = b.time
        for i in sorted(found):
            gap = t - evs[i].time
            if gap <= horizon_ms:
                arcs[(i, j)] = Arc(tuple(found[i]), gap)
                mine.append(i)
        preds.append(mine)
        if b.src is not None:
            last_by_src[b.src] = j
        if b.user is not None:
            last_by_user[b.user] = j
        if b.dst is not None:
            last_by_dst[b.dst] = j
    return ActivityGraph(evs, arcs, preds)


def run_lengths(g: ActivityGraph) -> tuple[list[int], list[bool]]:
    """Recurrence run length ending at each event, and whether the run stops there.

    A run is a path of arcs joining events of the same category.
    """
    n = len(g.events)
    length = [1] * n
    continues = [False] * n
    for (i, j) in g.arcs:
        if g.events[i].category == g.events[j].category:
            continues[i] = True
    for j in range(n):
        cat = g.events[j].category
        for i in g.preds[j]:
            if g.events[i].category == cat and length[i] + 1 > length[j]:
                length[j] = length[i] + 1
    ends = [length[j] > 1 and not continues[j] for j in range(n)]
    return length, ends


@dataclass
class MergedNode:
    category: Category
    states: Counter = field(default_factory=Counter)
    self_arcs: int = 0
    loop_runs: Counter = field(default_factory=Counter)

    @property
    def looped(self) -> bool:
        return self.self_arcs > 0


@dataclass
class MergedGraph:
    nodes: dict[Category, MergedNode]
    arcs: Counter

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def link_count(self) -> int:
        return len(self.arcs)

    def dump(self) -> str:
        lines = []
        for cat in sorted(self.nodes, key=str):
            node = self.nodes[cat]
            loops = ",".join(f"{k}:{v}" for k, v in sorted(node.loop_runs.items())) or "-"
            lines.append(
                f"node {cat} states={len(node.states)} events={sum(node.states.values())}"
                f" recurrences={node.self_arcs} loops={loops}"
            )
        for (a, b), n in sorted(self.arcs.items(), key=lambda kv: (str(kv[0][0]), str(kv[0][1]))):
            lines.append(f"arc {a} -> {b} {n}")
        return "\n".join(lines) + "\n"


def merge(g: ActivityGraph) -> MergedGraph:
    """Contract the activity graph by category.

    Same-category arcs are absorbed into loop marks; all other arcs are
    summed per (category, category) pair.
    """
    nodes: dict[Category, MergedNode] = {}
    for e in g.events:
        node = nodes.get(e.category)
        if node is None:
            node = nodes[e.category] = MergedNode(e.category)
        node.states[e.state] += 1
    arcs: Counter = Counter()
    for (i, j) in g.arcs:
        a, b = g.events[i].category, g.events[j].category
        if a == b:
            nodes[a].self_arcs += 1
        else:
            arcs[(a, b)] += 1
    length, ends = run_lengths(g)
    for j, e in enumerate(g.events):
        if ends[j]:
            nodes[e.category].loop_runs[length[j]] += 1
    return MergedGraph(nodes, arcs)


def merged_graph(events: Sequence[NormalizedEvent], horizon_ms: int = HOUR_MS) -> MergedGraph:
    return merge(build_activity_graph(events, horizon_ms))


def nearest_by_category(g: ActivityGraph, j: int) -> dict[Category, int]:
    """For event j, the latest predecessor of each category."""
    out: dict[Category, int] = {}
    for i in g.preds[j]:
        cat = g.events[i].category
        if i > out.get(cat, -1):
            out[cat] = i
    return out


def chain_of(g: ActivityGraph, j: int, limit: Optional[int] = None) -> list[int]:
    """Walk back through nearest predecessors; oldest first."""
    chain = []
    cur = j
    while g.preds[cur] and (limit is None or len(chain) < limit):
        cur = max(g.preds[cur])
        chain.append(cur)
    chain.reverse()
    return chain
