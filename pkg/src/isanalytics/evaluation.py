"""Triage of deviances in the (intention, expertise, criticality) space.

Each deviance gets a point in [0, 1]^3.  A linear SVM trained on analyst
labelled points gives a decision value; two thresholds cut it into normal
evolution, suspicious and attack areas.  Normal evolutions are fed back
into the behaviour model, the rest become alerts.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .behavior_model import BehaviorModel, learn
from .detection import Deviance, DevianceKind
from .events import order_events
from .selection import ComponentDescriptor, Context
from .svm import fit_linear_svm

LABELS = {"normal": -1, "attack": 1}


class MissingContext(KeyError):
    pass


class DegenerateData(ValueError):
    pass


class Verdict(str, enum.Enum):
    NORMAL_EVOLUTION = "NormalEvolution"
    SUSPICIOUS = "Suspicious"
    ATTACK = "Attack"


@dataclass(frozen=True)
class ScoringTables:
    intention_base: dict[str, float]
    deviation_weight: float
    structural_deviation: float
    chain_bonus: float
    action_expertise: dict[str, float]
    target_expertise: dict[str, float]
    owner_expertise: dict[str, float]
    zone_criticality: dict[str, float]
    admin_users: tuple[str, ...] = ()
    neutral: float = 0.5

    @classmethod
    def from_dict(cls, obj: dict) -> "ScoringTables":
        obj = dict(obj)
        obj["admin_users"] = tuple(obj.get("admin_users", ()))
        return cls(**obj)


def load_scoring(path: Union[str, Path, None] = None) -> ScoringTables:
    if path is None:
        text = resources.files("isanalytics.data").joinpath("scoring.json").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return ScoringTables.from_dict(json.loads(text))


def _clamp(x: float) -> float:
    return min(1.0, max(0.0, x))


@dataclass(frozen=True)
class EvaluationPoint:
    intention: float
    expertise: float
    criticality: float
    deviance: Optional[Deviance] = field(default=None, compare=False)
    missing_context: bool = False

    def __post_init__(self):
        for v in (self.intention, self.expertise, self.criticality):
            if not 0.0 <= v <= 1.0:
                raise ValueError("evaluation scores must lie in [0, 1]")

    def vector(self) -> tuple[float, float, float]:
        return (self.intention, self.expertise, self.criticality)


def target_address(d: Deviance) -> Optional[str]:
    return d.event.dst if d.event.dst is not None else d.event.src


def score(
    d: Deviance,
    context: Context,
    tables: Optional[ScoringTables] = None,
    deviant_ids: Iterable[str] = (),
    strict: bool = False,
) -> EvaluationPoint:
    """Place a deviance in the 3-D evaluation space.

    A target without a context descriptor gets the neutral value for every
    component-dependent term and ``missing_context`` set, unless ``strict``.
    """
    t = tables or load_scoring()
    e = d.event
    mode = e.category.movement.mode.value

    intention = t.intention_base.get(mode, t.neutral)
    if d.kind is DevianceKind.PROBABILISTIC:
        intention += (1.0 - d.probability) * t.deviation_weight
    else:
        intention += t.structural_deviation
    deviant = set(deviant_ids)
    if any(c.event_id in deviant for c in d.chain):
        intention += t.chain_bonus

    addr = target_address(d)
    desc: Optional[ComponentDescriptor] = context.get(addr) if addr is not None else None
    if desc is None and strict:
        raise MissingContext(addr)

    is_admin = e.category.target.secondary == "Admin" or (e.user is not None and e.user in t.admin_users)
    owner = t.owner_expertise["admin" if is_admin else "user"]
    action = t.action_expertise.get(mode, t.neutral)
    if desc is None:
        expertise = (action + t.neutral + owner) / 3
        criticality = t.neutral
    else:
        expertise = (action + t.target_expertise.get(desc.nature, t.neutral) + owner) / 3
        criticality = (
            (1.0 if desc.vulnerable else 0.0)
            + t.zone_criticality.get(desc.zone, t.neutral)
            + desc.importance
        ) / 3
    return EvaluationPoint(_clamp(intention), _clamp(expertise), _clamp(criticality), d, desc is None)


# -- SVM triage -------------------------------------------------------------


@dataclass(frozen=True)
class TriageModel:
    weights: tuple[float, float, float]
    bias: float
    t_low: float
    t_high: float

    def decision_value(self, p: Union[EvaluationPoint, Sequence[float]]) -> float:
        v = p.vector() if isinstance(p, EvaluationPoint) else tuple(p)
        return float(np.dot(self.weights, v) + self.bias)

    def to_dict(self) -> dict:
        return {"weights": list(self.weights), "bias": self.bias, "t_low": self.t_low, "t_high": self.t_high}

    @classmethod
    def from_dict(cls, obj: dict) -> "TriageModel":
        return cls(tuple(obj["weights"]), obj["bias"], obj["t_low"], obj["t_high"])


def train_triage(labeled: Sequence[tuple[Sequence[float], str]], C: float = 1e6, tol: float = 1e-6) -> TriageModel:
    """Fit the normal/attack frontier and derive the suspicious band from it.

    The band runs from the highest decision value of a training normal to
    the lowest of a training attack; if those cross, both collapse to
    their midpoint.
    """
    pts = np.array([p.vector() if isinstance(p, EvaluationPoint) else tuple(p) for p, _ in labeled], dtype=float)
    try:
        y = np.array([LABELS[lab] for _, lab in labeled], dtype=float)
    except KeyError as exc:
        raise ValueError(f"unknown label {exc.args[0]!r}") from None
    if len(pts) == 0 or not (np.any(y > 0) and np.any(y < 0)):
        raise DegenerateData("need at least one normal and one attack point")
    if np.all(pts == pts[0]):
        raise DegenerateData("all training points are identical")
    svm = fit_linear_svm(pts, y, C=C, tol=tol)
    # overlapping classes can make "everything on one side" optimal
    if np.linalg.norm(svm.weights) < 1e-6:
        raise DegenerateData("frontier has zero weights")
    f = svm.decision(pts)
    t_low = float(np.max(f[y < 0]))
    t_high = float(np.min(f[y > 0]))
    if t_low > t_high:
        t_low = t_high = (t_low + t_high) / 2
    return TriageModel(tuple(float(w) for w in svm.weights), float(svm.bias), t_low, t_high)


def triage(tm: TriageModel, p: Union[EvaluationPoint, Sequence[float]]) -> Verdict:
    f = tm.decision_value(p)
    if f < tm.t_low:
        return Verdict.NORMAL_EVOLUTION
    if f > tm.t_high:
        return Verdict.ATTACK
    return Verdict.SUSPICIOUS


@dataclass(frozen=True)
class TriagedDeviance:
    deviance: Deviance
    point: EvaluationPoint
    decision_value: float
    verdict: Verdict

    def alert_record(self) -> dict:
        rec = self.deviance.to_dict()
        rec["scores"] = list(self.point.vector())
        rec["decision_value"] = self.decision_value
        rec["verdict"] = self.verdict.value
        return rec


def triage_all(
    tm: TriageModel,
    deviances: Sequence[Deviance],
    context: Context,
    tables: Optional[ScoringTables] = None,
) -> list[TriagedDeviance]:
    tables = tables or load_scoring()
    deviant_ids = {d.event.event_id for d in deviances}
    out = []
    for d in deviances:
        p = score(d, context, tables, deviant_ids)
        out.append(TriagedDeviance(d, p, tm.decision_value(p), triage(tm, p)))
    return out


@dataclass
class ApplyResult:
    updated: int
    alerts: list[dict]


def apply_verdicts(model: BehaviorModel, triaged: Sequence[TriagedDeviance]) -> ApplyResult:
    """Learn normal evolutions as one batch; everything else becomes an alert.

    Needs exclusive access to the model: it is thawed during the update and
    its frozen flag restored afterwards.
    """
    normal = [t for t in triaged if t.verdict is Verdict.NORMAL_EVOLUTION]
    alerts = [t.alert_record() for t in triaged if t.verdict is not Verdict.NORMAL_EVOLUTION]
    if normal:
        batch = {}
        for t in normal:
            for c in t.deviance.chain:
                batch.setdefault(c.event_id, c)
            batch[t.deviance.event.event_id] = t.deviance.event
        only = {t.deviance.event.event_id for t in normal}
        was_frozen = model.frozen
        model.frozen = False
        try:
            learn(model, order_events(batch.values()), only=only)
        finally:
            model.frozen = was_frozen
    return ApplyResult(len(normal), alerts)


# -- labelled point files ---------------------------------------------------


def read_labeled(path: Union[str, Path]) -> list[tuple[tuple[float, float, float], str]]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(((float(row["intention"]), float(row["expertise"]), float(row["criticality"])),
                        row["label"].strip()))
    return out


def write_labeled(points: Iterable[tuple[Sequence[float], str]], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["intention", "expertise", "criticality", "label"])
        for (i, e, c), lab in points:
            w.writerow([repr(float(i)), repr(float(e)), repr(float(c)), lab])
