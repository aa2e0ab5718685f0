"""Shared domain types and small numeric helpers."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)


class UserlearnError(Exception):
    """Base class for package errors."""


class UsageError(UserlearnError, ValueError):
    """Bad arguments or configuration supplied by the caller."""


class ValidationError(UserlearnError, ValueError):
    """Input data violates a documented invariant."""


class LogFormatError(UserlearnError, ValueError):
    """A log record could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class Study(str, enum.Enum):
    FORECACHE = "forecache"
    IMMENS = "immens"
    TABLEAU = "tableau"
    SYNTHETIC = "synthetic"


class Annotation(str, enum.Enum):
    NONE = "none"
    OBSERVATION = "observation"
    INSIGHT = "insight"
    HYPOTHESIS = "hypothesis"
    ANSWER = "answer"
    GENERALIZATION = "generalization"
    CONFIRMATION = "confirmation"
    CONFIG = "config"

    @classmethod
    def parse(cls, label: Any) -> "Annotation":
        if label is None or label == "":
            return cls.NONE
        if isinstance(label, cls):
            return label
        try:
            return cls(str(label).strip().lower())
        except ValueError:
            log.warning("unknown annotation %r mapped to 'none'", label)
            return cls.NONE


@dataclass(frozen=True)
class Event:
    session_id: str
    user_id: str
    study: Study
    index: int
    raw_action: str
    params: Mapping[str, Any] = field(default_factory=dict)
    annotation: Annotation = Annotation.NONE

    def to_record(self) -> dict:
        return {
            "session_id": self.session_id,
            "user_id": self.user_id,
            "study": self.study.value,
            "index": self.index,
            "raw_action": self.raw_action,
            "params": dict(self.params),
            "annotation": self.annotation.value,
        }


@dataclass(frozen=True)
class Session:
    events: tuple[Event, ...]
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        events = tuple(self.events)
        object.__setattr__(self, "events", events)
        if not events:
            raise ValidationError("session has no events")
        first = events[0]
        for ev in events[1:]:
            if ev.session_id != first.session_id or ev.study != first.study:
                raise ValidationError(
                    f"session {first.session_id!r} mixes events from "
                    f"{ev.session_id!r}/{ev.study.value}"
                )
        for prev, ev in zip(events, events[1:]):
            if ev.index <= prev.index:
                raise ValidationError(
                    f"session {first.session_id!r}: index {ev.index} "
                    f"does not follow {prev.index}"
                )

    @property
    def session_id(self) -> str:
        return self.events[0].session_id

    @property
    def user_id(self) -> str:
        return self.events[0].user_id

    @property
    def study(self) -> Study:
        return self.events[0].study

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class Step:
    """One element of a decision trace.

    ``items`` is the prediction target for subset formalizations; otherwise
    ``action`` is. ``next_state`` is filled by MDP mappers so value learners
    can bootstrap on the final step. ``info`` carries audit data such as the
    added/dropped attribute sets.
    """

    action: Hashable = None
    reward: float = 0.0
    state: Hashable = None
    context: Hashable = None
    items: frozenset | None = None
    next_state: Hashable = None
    info: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.reward):
            raise ValidationError(f"non-finite reward {self.reward!r}")
        if self.items is not None and not isinstance(self.items, frozenset):
            object.__setattr__(self, "items", frozenset(self.items))


@dataclass(frozen=True)
class ActionSpace:
    """Discrete action set or subset-of-items space.

    ``allowed`` optionally restricts the actions available in each state
    (ForeCache: two actions in Foraging/Sensemaking, three in Navigation).
    """

    kind: str
    actions: tuple
    item_universe: tuple = ()
    subset_size: int = 1
    allowed: Mapping[Hashable, tuple] | None = None

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "item_universe", tuple(self.item_universe))
        if self.kind not in ("discrete", "subset"):
            raise UsageError(f"unknown action space kind {self.kind!r}")
        if not self.actions:
            raise UsageError("action space is empty")
        if len(set(self.actions)) != len(self.actions):
            raise UsageError("action ids must be distinct")
        if self.kind == "subset":
            if self.subset_size < 1 or self.subset_size > len(self.item_universe):
                raise UsageError(
                    f"subset_size {self.subset_size} outside 1..{len(self.item_universe)}"
                )
        if self.allowed is not None:
            known = set(self.actions)
            for s, acts in self.allowed.items():
                if not acts or not set(acts) <= known:
                    raise UsageError(f"allowed actions for state {s!r} are invalid")

    @classmethod
    def discrete(cls, actions: Iterable, allowed: Mapping | None = None) -> "ActionSpace":
        return cls("discrete", tuple(actions), allowed=allowed)

    @classmethod
    def subset(cls, items: Iterable, subset_size: int = 3) -> "ActionSpace":
        items = tuple(items)
        return cls("subset", items, item_universe=items, subset_size=subset_size)

    @property
    def n(self) -> int:
        return len(self.actions)

    def index(self, action: Hashable) -> int:
        try:
            return self.actions.index(action)
        except ValueError:
            raise ValidationError(f"action {action!r} not in action space") from None

    def allowed_indices(self, state: Hashable = None) -> np.ndarray:
        if self.allowed is None or state is None or state not in self.allowed:
            return np.arange(self.n)
        return np.array([self.actions.index(a) for a in self.allowed[state]])


@dataclass(frozen=True)
class Prediction:
    ranked: tuple[tuple[Hashable, float], ...]
    k: int

    def __post_init__(self):
        object.__setattr__(self, "ranked", tuple(tuple(r) for r in self.ranked))
        if self.k < 1 or len(self.ranked) != self.k:
            raise ValidationError(f"prediction holds {len(self.ranked)} ids, expected k={self.k}")
        ids = [r[0] for r in self.ranked]
        if len(set(ids)) != len(ids):
            raise ValidationError("prediction ids must be distinct")
        scores = [r[1] for r in self.ranked]
        if any(b > a for a, b in zip(scores, scores[1:])):
            raise ValidationError("prediction scores must be non-increasing")

    @property
    def ids(self) -> list:
        return [r[0] for r in self.ranked]

    @property
    def top(self) -> Hashable:
        return self.ranked[0][0]


def make_rng(seed: int | Sequence[int] | np.random.SeedSequence | None) -> np.random.Generator:
    return np.random.default_rng(seed)


def softmax(logits: Sequence[float]) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    if z.size == 0:
        raise UsageError("softmax of an empty vector")
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def argmax_tiebreak(values: Sequence[float], rng: np.random.Generator) -> int:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise UsageError("argmax of an empty vector")
    best = np.flatnonzero(v == v.max())
    if best.size == 1:
        return int(best[0])
    return int(best[rng.integers(best.size)])


def rank_top_k(
    scores: Sequence[float],
    ids: Sequence[Hashable],
    k: int,
    rng: np.random.Generator,
) -> Prediction:
    """Top-k ids by score, ties broken by a uniform random permutation."""
    s = np.asarray(scores, dtype=float)
    k = min(k, s.size)
    tiebreak = rng.permutation(s.size)
    order = np.lexsort((tiebreak, -s))[:k]
    return Prediction(tuple((ids[i], float(s[i])) for i in order), k)


def sample_top_k(
    probs: Sequence[float],
    ids: Sequence[Hashable],
    k: int,
    rng: np.random.Generator,
) -> Prediction:
    """Draw k ids without replacement proportionally to ``probs``.

    Uses Gumbel-top-k keys, so the first id is an exact draw from ``probs``
    and the reported scores (the perturbed log-probabilities) are sorted.
    """
    p = np.asarray(probs, dtype=float)
    with np.errstate(divide="ignore"):
        keys = np.log(p) + rng.gumbel(size=p.size)
    return rank_top_k(keys, ids, k, rng)
