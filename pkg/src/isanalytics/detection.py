"""Exploitation-period detection over sliding windows.

Each window's events are linked with the same correlation rules used in
training, then every event is checked against the frozen model.  An event
yields at most one deviance, in the precedence node > link > state >
probabilistic.
"""

from __future__ import annotations

import enum
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

from .activity_graph import build_activity_graph, chain_of
from .behavior_model import BehaviorModel, query
from .events import NormalizedEvent, order_events

MINUTE_MS = 60_000
DEFAULT_WIDTH_MS = 60 * MINUTE_MS
DEFAULT_STRIDE_MS = 15 * MINUTE_MS
SWEEP_THRESHOLDS = (0.1, 0.01, 0.001, 0.0001, 0.002)


class DevianceKind(str, enum.Enum):
    NODE = "NodeDeviance"
    LINK = "LinkDeviance"
    STATE = "StateDeviance"
    PROBABILISTIC = "ProbabilisticDeviance"


STRUCTURAL = (DevianceKind.NODE, DevianceKind.LINK, DevianceKind.STATE)


@dataclass(frozen=True)
class DetectionWindow:
    start: int
    width: int
    stride: int
    events: tuple[NormalizedEvent, ...]

    def __post_init__(self):
        if self.width <= 0 or self.stride <= 0:
            raise ValueError("window width and stride must be positive")
        if self.stride > self.width:
            raise ValueError("stride must not exceed width")
        for e in self.events:
            if not self.start <= e.time < self.start + self.width:
                raise ValueError(f"event {e.event_id} lies outside the window")

    @property
    def end(self) -> int:
        return self.start + self.width


@dataclass(frozen=True)
class EventScore:
    """Structural verdict or conditional probability for one event."""

    event: NormalizedEvent
    chain: tuple[NormalizedEvent, ...]
    structural: Optional[DevianceKind]
    probability: Optional[float]

    def flagged(self, threshold: float) -> bool:
        return self.structural is not None or self.probability < threshold


@dataclass(frozen=True)
class Deviance:
    kind: DevianceKind
    event: NormalizedEvent
    chain: tuple[NormalizedEvent, ...]
    probability: Optional[float] = None
    threshold: Optional[float] = None

    def __post_init__(self):
        if self.kind is DevianceKind.PROBABILISTIC:
            if self.probability is None or self.threshold is None or not self.probability < self.threshold:
                raise ValueError("probabilistic deviance needs probability < threshold")

    def to_dict(self) -> dict:
        e = self.event
        return {
            "kind": self.kind.value,
            "event_id": e.event_id,
            "category": str(e.category),
            "user": e.user,
            "src": e.src,
            "dst": e.dst,
            "probability": self.probability,
            "threshold": self.threshold,
            "chain": [c.event_id for c in self.chain],
        }


def score_events(
    model: BehaviorModel,
    events: Sequence[NormalizedEvent],
    emit_from: Optional[int] = None,
) -> list[EventScore]:
    """Score every event with time >= emit_from; earlier events are context only."""
    g = build_activity_graph(events, model.horizon_ms)
    out = []
    for j, e in enumerate(g.events):
        if emit_from is not None and e.time < emit_from:
            continue
        chain = tuple(g.events[i] for i in chain_of(g, j))
        preds = [g.events[i] for i in g.preds[j]]
        node = model.nodes.get(e.category)
        kind: Optional[DevianceKind] = None
        prob: Optional[float] = None
        if node is None:
            kind = DevianceKind.NODE
        elif any(
            (p.category == e.category and not node.looped)
            or (p.category != e.category and not model.known_link(p.category, e.category))
            for p in preds
        ):
            kind = DevianceKind.LINK
        elif e.state not in node.states:
            kind = DevianceKind.STATE
        else:
            prob = query(model, e, preds)
        out.append(EventScore(e, chain, kind, prob))
    return out


def deviances_from_scores(scores: Iterable[EventScore], threshold: float) -> list[Deviance]:
    out = []
    for s in scores:
        if s.structural is not None:
            out.append(Deviance(s.structural, s.event, s.chain))
        elif s.probability < threshold:
            out.append(Deviance(DevianceKind.PROBABILISTIC, s.event, s.chain, s.probability, threshold))
    return out


def detect(model: BehaviorModel, window: DetectionWindow, threshold: float,
           emit_from: Optional[int] = None) -> list[Deviance]:
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    return deviances_from_scores(score_events(model, window.events, emit_from), threshold)


def sweep_counts(scores: Sequence[EventScore], thresholds: Iterable[float]) -> dict:
    """Deviance counts per kind, with probabilistic counts per threshold."""
    ths = list(thresholds)
    if not ths:
        raise ValueError("need at least one threshold")
    out = {k.value: sum(1 for s in scores if s.structural is k) for k in STRUCTURAL}
    probs = [s.probability for s in scores if s.structural is None]
    out["scored"] = len(probs)
    out["probabilistic"] = {t: sum(1 for p in probs if p < t) for t in ths}
    return out


def sweep(model: BehaviorModel, window: DetectionWindow, thresholds: Iterable[float]) -> dict:
    return sweep_counts(score_events(model, window.events), thresholds)


# -- streams ----------------------------------------------------------------


def windows(
    events: Sequence[NormalizedEvent],
    width: int = DEFAULT_WIDTH_MS,
    stride: int = DEFAULT_STRIDE_MS,
) -> Iterator[tuple[DetectionWindow, int]]:
    """Slide a window over the stream; yields (window, emit_from).

    The emit region of each window is its last stride, so every event is
    judged exactly once, with at least ``width - stride`` of look-back.
    """
    evs = order_events(events)
    if not evs:
        return
    first = evs[0].time
    start = (first // stride) * stride - (width - stride)
    lo = 0
    hi = 0
    n = len(evs)
    last = evs[-1].time
    while start + width - stride <= last:
        end = start + width
        while lo < n and evs[lo].time < start:
            lo += 1
        while hi < n and evs[hi].time < end:
            hi += 1
        emit_from = end - stride
        if hi > lo and evs[hi - 1].time >= emit_from:
            yield DetectionWindow(start, width, stride, tuple(evs[lo:hi])), emit_from
        start += stride


_WORKER_MODEL: Optional[BehaviorModel] = None


def _init_worker(model: BehaviorModel) -> None:
    global _WORKER_MODEL
    _WORKER_MODEL = model


def _score_chunk(chunk: list[tuple[tuple[NormalizedEvent, ...], int]]) -> list[list[EventScore]]:
    return [score_events(_WORKER_MODEL, evs, emit) for evs, emit in chunk]


def scan(
    model: BehaviorModel,
    events: Sequence[NormalizedEvent],
    width: int = DEFAULT_WIDTH_MS,
    stride: int = DEFAULT_STRIDE_MS,
    jobs: int = 1,
) -> list[EventScore]:
    """Score a whole stream window by window.  Output order does not depend on ``jobs``."""
    work = [(w.events, emit) for w, emit in windows(events, width, stride)]
    if jobs <= 1 or len(work) < 2:
        results = [score_events(model, evs, emit) for evs, emit in work]
    else:
        size = max(1, -(-len(work) // (jobs * 4)))
        chunks = [work[i:i + size] for i in range(0, len(work), size)]
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(model,)) as pool:
            results = [r for part in pool.map(_score_chunk, chunks) for r in part]
    return [s for window_scores in results for s in window_scores]


def default_jobs() -> int:
    return os.cpu_count() or 1


def write_alerts(deviances: Iterable[Deviance], path, extra: Optional[list[dict]] = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, d in enumerate(deviances):
            rec = d.to_dict()
            if extra is not None:
                rec.update(extra[k])
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
            fh.write("\n")
