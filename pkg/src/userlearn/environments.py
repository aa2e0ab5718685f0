"""Turn sessions into decision traces for the three study formalizations.

ForeCache logs become an MDP over exploration stages, imMens logs a K-arm
bandit over linked visualizations, and Tableau logs a combinatorial bandit
over consolidated attributes.
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import yaml

from userlearn.core import ActionSpace, Annotation, Session, Step, Study, UsageError, ValidationError
from userlearn.ingest import DEFAULT_MAX_ZOOM

log = logging.getLogger(__name__)

FORAGING, NAVIGATION, SENSEMAKING = "Foraging", "Navigation", "Sensemaking"
MDP_STATES = (FORAGING, NAVIGATION, SENSEMAKING)
MAINTAIN, SWITCH, SWITCH_FORAGE, SWITCH_SENSE = "maintain", "switch", "switch_forage", "switch_sense"
MDP_ACTIONS = (MAINTAIN, SWITCH, SWITCH_FORAGE, SWITCH_SENSE)
MDP_ALLOWED = {
    FORAGING: (MAINTAIN, SWITCH),
    NAVIGATION: (MAINTAIN, SWITCH_FORAGE, SWITCH_SENSE),
    SENSEMAKING: (MAINTAIN, SWITCH),
}
TRANSITIONS = {
    (FORAGING, FORAGING): MAINTAIN,
    (FORAGING, NAVIGATION): SWITCH,
    (NAVIGATION, NAVIGATION): MAINTAIN,
    (NAVIGATION, FORAGING): SWITCH_FORAGE,
    (NAVIGATION, SENSEMAKING): SWITCH_SENSE,
    (SENSEMAKING, SENSEMAKING): MAINTAIN,
    (SENSEMAKING, NAVIGATION): SWITCH,
}
NEXT_STATE = {(s, a): t for (s, t), a in TRANSITIONS.items()}
DEFAULT_COARSE_THRESHOLD = 3
PAN_ACTIONS = frozenset({"pan", "pan_left", "pan_right", "pan_up", "pan_down"})
ZOOM_ACTIONS = frozenset({"zoom", "zoom_in", "zoom_out"})

IMMENS_REWARDS = {
    Annotation.INSIGHT: 1.0,
    Annotation.HYPOTHESIS: 1.0,
    Annotation.ANSWER: 1.0,
    Annotation.GENERALIZATION: 1.0,
    Annotation.CONFIRMATION: 1.0,
    Annotation.OBSERVATION: 0.1,
    Annotation.CONFIG: 0.0,
    Annotation.NONE: 0.0,
}
START_CONTEXT = "start"

KEEP, ADD, DROP, RESET = "Keep", "Add", "Drop", "Reset"
SUBSET_SIZE = 3


@dataclass(frozen=True)
class Trace:
    kind: str
    user_id: str
    session_id: str
    steps: tuple[Step, ...]
    space: ActionSpace
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.steps)

    def labels(self) -> list[frozenset]:
        """Per-step label sets used for preference statistics."""
        if self.kind == "mdp":
            return [frozenset([s.state]) for s in self.steps]
        if self.kind == "cmab":
            return [s.items or frozenset() for s in self.steps]
        return [frozenset([s.action]) for s in self.steps]


def mdp_space() -> ActionSpace:
    return ActionSpace.discrete(MDP_ACTIONS, allowed=MDP_ALLOWED)


def stage_of(event, coarse_threshold: int = DEFAULT_COARSE_THRESHOLD) -> str:
    action = event.raw_action.lower()
    if action in ZOOM_ACTIONS:
        return NAVIGATION
    if action in PAN_ACTIONS:
        zoom = event.params.get("zoom_level")
        return FORAGING if zoom <= coarse_threshold else SENSEMAKING
    raise ValidationError(f"unknown ForeCache action {event.raw_action!r} @ index {event.index}")


def forecache_reward(event) -> float:
    return float(event.params["snow_level"]) * float(event.params["zoom_level"])


def map_forecache(session: Session, coarse_threshold: int = DEFAULT_COARSE_THRESHOLD,
                  max_zoom: int = DEFAULT_MAX_ZOOM) -> Trace:
    """One step per consecutive event pair; the reward is earned on arrival."""
    for ev in session.events:
        for name in ("zoom_level", "snow_level"):
            if ev.params.get(name) is None:
                raise ValidationError(f"missing field {name} @ index {ev.index}")
        if not 0 <= ev.params["zoom_level"] <= max_zoom:
            raise ValidationError(f"zoom_level out of range @ index {ev.index}")
    stages = [stage_of(ev, coarse_threshold) for ev in session.events]
    steps = []
    last = len(stages) - 2
    for t, (ev_next, s, s_next) in enumerate(zip(session.events[1:], stages, stages[1:])):
        action = TRANSITIONS.get((s, s_next))
        if action is None:
            raise ValidationError(
                f"direct {s} -> {s_next} transition @ index {ev_next.index}")
        steps.append(Step(action=action, reward=forecache_reward(ev_next), state=s,
                          next_state=s_next, context=ev_next.raw_action,
                          info={"terminal": t == last, "index": ev_next.index}))
    return Trace("mdp", session.user_id, session.session_id, tuple(steps), mdp_space(),
                 dict(session.meta))


def map_immens(session: Session, arm_set: Sequence[str]) -> Trace:
    """Visualization choices with annotation-derived rewards.

    The context of a step is the raw action of the previous interaction, so
    it is known before the visualization choice being predicted.
    """
    arms = tuple(arm_set)
    known = set(arms)
    steps = []
    context = START_CONTEXT
    for ev in session.events:
        vis = ev.params.get("visualization")
        if vis not in known:
            raise ValidationError(f"visualization {vis!r} not in arm set @ index {ev.index}")
        steps.append(Step(action=vis, reward=IMMENS_REWARDS[ev.annotation], context=context,
                          info={"index": ev.index}))
        context = ev.raw_action
    return Trace("bandit", session.user_id, session.session_id, tuple(steps),
                 ActionSpace.discrete(arms), dict(session.meta))


def consolidate(labels: Iterable[str], mapping: Mapping[str, str] | None) -> frozenset:
    labels = list(labels)
    if mapping is None:
        return frozenset(labels)
    missing = sorted({lab for lab in labels if lab not in mapping})
    if missing:
        raise ValidationError(f"attributes missing from consolidation map: {missing}")
    return frozenset(mapping[lab] for lab in labels)


def classify_meta_action(prev: frozenset, cur: frozenset) -> str:
    if cur == prev:
        return KEEP
    if not cur:
        return RESET
    if cur - prev:
        return ADD  # includes mixed add-and-drop
    return DROP


def apply_meta_action(prev: frozenset, added: frozenset, dropped: frozenset) -> frozenset:
    return (prev - dropped) | added


def map_tableau(session: Session, consolidation: Mapping[str, str] | None,
                truth: Mapping[str, frozenset], universe: Sequence[str] | None = None,
                subset_size: int = SUBSET_SIZE) -> Trace:
    task = session.meta.get("task")
    if task is None and len(truth) == 1:
        task = next(iter(truth))
    if task not in truth:
        raise ValidationError(f"no ground truth for task {task!r} in session {session.session_id!r}")
    goal = frozenset(truth[task])
    steps = []
    prev: frozenset = frozenset()
    for ev in session.events:
        attrs = ev.params.get("attributes")
        if attrs is None:
            raise ValidationError(f"missing field attributes @ index {ev.index}")
        cur = consolidate(attrs, consolidation)
        added, dropped = cur - prev, prev - cur
        steps.append(Step(action=classify_meta_action(prev, cur), items=cur,
                          reward=float(len(cur & goal)), context=ev.raw_action,
                          info={"added": added, "dropped": dropped, "index": ev.index}))
        prev = cur
    if universe is None:
        universe = sorted(set().union(goal, *(s.items for s in steps)))
    return Trace("cmab", session.user_id, session.session_id, tuple(steps),
                 ActionSpace.subset(universe, subset_size), dict(session.meta))


def _read_structured(path: Path) -> Any:
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        return json.loads(text)
    if path.suffix.lower() in (".yaml", ".yml"):
        return yaml.safe_load(text)
    return None


def _plain_pairs(path: Path) -> Iterable[tuple[str, str]]:
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        for sep in ("=", ":", "\t", ","):
            if sep in line:
                key, value = line.split(sep, 1)
                yield key.strip(), value.strip()
                break
        else:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")


def load_consolidation(path: str | Path) -> dict[str, str]:
    """Raw attribute -> consolidated attribute.

    Accepts JSON/YAML objects, or plain text with one ``raw = consolidated``
    pair per line.
    """
    path = Path(path)
    data = _read_structured(path)
    if data is None:
        data = dict(_plain_pairs(path))
    if not isinstance(data, dict):
        raise UsageError(f"{path}: consolidation map must be a key/value mapping")
    return {str(k): str(v) for k, v in data.items()}


def load_ground_truth(path: str | Path) -> dict[str, frozenset]:
    """Task id -> essential consolidated attributes.

    JSON/YAML ``{task: [attr, ...]}`` or plain ``task: a, b, c`` lines.
    """
    path = Path(path)
    data = _read_structured(path)
    if data is None:
        data = {k: [a.strip() for a in v.split(",") if a.strip()] for k, v in _plain_pairs(path)}
    if not isinstance(data, dict):
        raise UsageError(f"{path}: ground truth must map task ids to attribute lists")
    out = {}
    for task, attrs in data.items():
        if isinstance(attrs, str):
            attrs = [a.strip() for a in attrs.split(",") if a.strip()]
        if not attrs:
            raise UsageError(f"{path}: task {task!r} has no essential attributes")
        out[str(task)] = frozenset(str(a) for a in attrs)
    return out


def build_traces(sessions: Sequence[Session], study: Study | str, *,
                 coarse_threshold: int = DEFAULT_COARSE_THRESHOLD,
                 max_zoom: int = DEFAULT_MAX_ZOOM,
                 arms: Sequence[str] | None = None,
                 consolidation: Mapping[str, str] | None = None,
                 truth: Mapping[str, frozenset] | None = None,
                 subset_size: int = SUBSET_SIZE) -> list[Trace]:
    """Map every session with the study's formalization.

    Arm sets and attribute universes are shared per dataset: given ones are
    used as-is, otherwise they are the sorted union over the sessions.
    """
    study = Study(study)
    by_dataset: dict[Any, list[Session]] = defaultdict(list)
    for s in sessions:
        by_dataset[s.meta.get("dataset")].append(s)
    traces = []
    if study == Study.FORECACHE:
        traces = [map_forecache(s, coarse_threshold, max_zoom) for s in sessions]
    elif study == Study.IMMENS:
        for group in by_dataset.values():
            arm_set = tuple(arms) if arms else tuple(sorted(
                {str(ev.params.get("visualization")) for s in group for ev in s.events}))
            traces += [map_immens(s, arm_set) for s in group]
    elif study == Study.TABLEAU:
        if truth is None:
            raise UsageError("tableau mapping needs a ground-truth file")
        for group in by_dataset.values():
            if consolidation is not None:
                universe = set(consolidation.values())
            else:
                universe = {a for s in group for ev in s.events for a in ev.params.get("attributes", [])}
            tasks = {s.meta.get("task") for s in group}
            for task in tasks:
                universe |= set(truth.get(task, ()))
            universe = sorted(universe)
            traces += [map_tableau(s, consolidation, truth, universe, subset_size) for s in group]
    else:
        raise UsageError(f"no formalization for study {study.value!r}; pass --study")
    return sorted(traces, key=lambda t: (t.user_id, t.session_id))
