"""Closed vocabulary and string codec for security-event categories.

A category labels what an event means: an intention directed at a target,
carried out through a movement (mode + nature), producing a gain.  The
canonical string form is ``Intention_Mode.Nature_Target1.Target2_Gain``;
the fully dotted form ``Intention_Mode.Nature.Target1.Target2.Gain`` is
accepted on input only.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Union

NOT_APPLICABLE = "N"
_SEPARATORS = ("_", ".")


class Intention(str, enum.Enum):
    RECON = "Recon"
    AUTHENTICATION = "Authentication"
    AUTHORIZATION = "Authorization"
    SYSTEM = "System"


class MovementMode(str, enum.Enum):
    ACTIVITY = "Activity"
    CONFIG = "Config"
    ATTACK = "Attack"
    MALWARE = "Malware"
    SUSPICIOUS = "Suspicious"
    VULNERABILITY = "Vulnerability"
    INFORMATION = "Information"


class Gain(str, enum.Enum):
    SUCCESS = "Success"
    FAILED = "Failed"
    DENIED = "Denied"
    ERROR = "Error"
    DETECTED = "Detected"
    VALID = "Valid"
    INVALID = "Invalid"
    NOTIFY = "Notify"
    EXPIRED = "Expired"
    EXCEEDED = "Exceeded"
    LOW = "Low"
    NORMAL = "Normal"


_ACTION_GAINS = frozenset({Gain.SUCCESS, Gain.FAILED, Gain.DENIED, Gain.ERROR})
_DETECTION_GAINS = frozenset({Gain.DETECTED})
_INFORMATION_GAINS = frozenset(
    {Gain.VALID, Gain.INVALID, Gain.NOTIFY, Gain.EXPIRED, Gain.EXCEEDED, Gain.LOW, Gain.NORMAL}
)

GAINS_BY_MODE: dict[MovementMode, frozenset[Gain]] = {
    MovementMode.ACTIVITY: _ACTION_GAINS,
    MovementMode.CONFIG: _ACTION_GAINS,
    MovementMode.ATTACK: _DETECTION_GAINS,
    MovementMode.MALWARE: _DETECTION_GAINS,
    MovementMode.SUSPICIOUS: _DETECTION_GAINS,
    MovementMode.VULNERABILITY: _DETECTION_GAINS,
    MovementMode.INFORMATION: _INFORMATION_GAINS,
}


def validate_gain_mode(mode: MovementMode, gain: Gain) -> bool:
    return gain in GAINS_BY_MODE[mode]


class ParseError(ValueError):
    """Raised for a malformed category string.

    ``position`` is the zero-based field index (intention, mode, nature,
    target1, target2, gain) where parsing failed, or -1 for whole-string
    problems such as a wrong field count.
    """

    def __init__(self, position: int, reason: str):
        super().__init__(f"field {position}: {reason}")
        self.position = position
        self.reason = reason


class VocabularyError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


@dataclass(frozen=True)
class Movement:
    mode: MovementMode
    nature: str

    def __str__(self) -> str:
        return f"{self.mode.value}.{self.nature}"


@dataclass(frozen=True)
class Target:
    primary: str
    secondary: Optional[str] = None

    def __str__(self) -> str:
        return f"{self.primary}.{self.secondary or NOT_APPLICABLE}"


@dataclass(frozen=True)
class Category:
    intention: Intention
    movement: Movement
    target: Target
    gain: Gain

    def __str__(self) -> str:
        return format_category(self)

    def __lt__(self, other: "Category") -> bool:
        return str(self) < str(other)


TARGET_POSITIONS = ("primary", "secondary", "both")


@dataclass(frozen=True)
class VocabularyTable:
    """Allowed movement natures per mode and target tokens per position."""

    natures: frozenset[tuple[MovementMode, str]]
    targets: dict[str, str]

    def allows_movement(self, mode: MovementMode, nature: str) -> bool:
        return (mode, nature) in self.natures

    def natures_for(self, mode: MovementMode) -> list[str]:
        return sorted(n for m, n in self.natures if m is mode)

    def allows_target(self, token: str, position: str) -> bool:
        rule = self.targets.get(token)
        return rule is not None and (rule == "both" or rule == position)

    def target_tokens(self, position: str) -> list[str]:
        return sorted(
            t for t, rule in self.targets.items()
            if t != NOT_APPLICABLE and rule in (position, "both")
        )

    def __hash__(self) -> int:
        return hash((self.natures, tuple(sorted(self.targets.items()))))


def _check_token(token: str) -> bool:
    return bool(token) and not any(sep in token for sep in _SEPARATORS) and not token.isspace()


def parse_vocabulary(lines: Iterable[str]) -> VocabularyTable:
    natures: set[tuple[MovementMode, str]] = set()
    targets: dict[str, str] = {}
    seen = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise VocabularyError(lineno, f"expected 3 tab-separated fields, got {len(parts)}")
        kind, token, qualifier = (p.strip() for p in parts)
        if not _check_token(token):
            raise VocabularyError(lineno, f"invalid token {token!r}")
        if kind == "nature":
            try:
                mode = MovementMode(qualifier)
            except ValueError:
                raise VocabularyError(lineno, f"unknown movement mode {qualifier!r}") from None
            if (mode, token) in natures:
                raise VocabularyError(lineno, f"duplicate nature {token!r} under {qualifier}")
            natures.add((mode, token))
        elif kind == "target":
            if qualifier not in TARGET_POSITIONS:
                raise VocabularyError(lineno, f"unknown target position {qualifier!r}")
            if token in targets:
                raise VocabularyError(lineno, f"duplicate target {token!r}")
            targets[token] = qualifier
        else:
            raise VocabularyError(lineno, f"unknown record kind {kind!r}")
        seen += 1
    if not seen:
        raise VocabularyError(0, "vocabulary table is empty")
    # the placeholder for an absent secondary target is always available
    targets.setdefault(NOT_APPLICABLE, "secondary")
    return VocabularyTable(frozenset(natures), targets)


def load_vocabulary(path: Union[str, Path]) -> VocabularyTable:
    with open(path, encoding="utf-8") as fh:
        return parse_vocabulary(fh)


@lru_cache(maxsize=1)
def default_vocabulary() -> VocabularyTable:
    text = resources.files("isanalytics.data").joinpath("vocabulary.tsv").read_text("utf-8")
    return parse_vocabulary(text.splitlines())


def format_category(c: Category) -> str:
    return (
        f"{c.intention.value}_{c.movement.mode.value}.{c.movement.nature}"
        f"_{c.target.primary}.{c.target.secondary or NOT_APPLICABLE}_{c.gain.value}"
    )


def _split_fields(s: str) -> list[str]:
    groups = s.split("_")
    if len(groups) == 4:
        # canonical: Intention _ Mode.Nature _ T1.T2 _ Gain
        movement, target = groups[1].split("."), groups[2].split(".")
        if len(movement) != 2 or len(target) != 2:
            raise ParseError(-1, "movement and target groups need exactly two dotted fields")
        return [groups[0], *movement, *target, groups[3]]
    if len(groups) == 2:
        rest = groups[1].split(".")
        if len(rest) != 5:
            raise ParseError(-1, f"dotted form needs 5 fields after the intention, got {len(rest)}")
        return [groups[0], *rest]
    raise ParseError(-1, f"expected 4 underscore groups (or 2 in dotted form), got {len(groups)}")


def make_category(
    intention: Union[Intention, str],
    mode: Union[MovementMode, str],
    nature: str,
    target1: str,
    target2: Optional[str],
    gain: Union[Gain, str],
    vocab: Optional[VocabularyTable] = None,
) -> Category:
    """Build a validated Category from its six fields."""
    vocab = vocab or default_vocabulary()
    try:
        intention = Intention(intention)
    except ValueError:
        raise ParseError(0, f"unknown intention {intention!r}") from None
    try:
        mode = MovementMode(mode)
    except ValueError:
        raise ParseError(1, f"unknown movement mode {mode!r}") from None
    if not vocab.allows_movement(mode, nature):
        raise ParseError(2, f"nature {nature!r} not allowed under {mode.value}")
    if not vocab.allows_target(target1, "primary") or target1 == NOT_APPLICABLE:
        raise ParseError(3, f"unknown primary target {target1!r}")
    if target2 == NOT_APPLICABLE:
        target2 = None
    if target2 is not None:
        if intention is Intention.RECON:
            raise ParseError(4, "Recon targets a single host; secondary target must be N")
        if not vocab.allows_target(target2, "secondary"):
            raise ParseError(4, f"unknown secondary target {target2!r}")
    try:
        gain = Gain(gain)
    except ValueError:
        raise ParseError(5, f"unknown gain {gain!r}") from None
    if not validate_gain_mode(mode, gain):
        raise ParseError(5, f"gain-mode violation: {gain.value} not permitted for {mode.value}")
    return Category(intention, Movement(mode, nature), Target(target1, target2), gain)


@lru_cache(maxsize=65536)
def _parse_cached(s: str, vocab: VocabularyTable) -> Category:
    fields = _split_fields(s)
    for i, f in enumerate(fields):
        if not f:
            raise ParseError(i, "empty field")
    return make_category(*fields, vocab=vocab)


def parse_category(s: str, vocab: Optional[VocabularyTable] = None) -> Category:
    if not s:
        raise ParseError(-1, "empty category string")
    return _parse_cached(s.strip(), vocab or default_vocabulary())
