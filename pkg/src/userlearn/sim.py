"""Synthetic analysts with known generating policies, and regret measurement.

Simulated sessions use the regular event schema, so they go through
ingest and the environment mappers like real logs do.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from userlearn.core import ActionSpace, Annotation, Event, Session, Step, Study, UsageError, make_rng
from userlearn.environments import (
    DEFAULT_COARSE_THRESHOLD,
    FORAGING,
    NAVIGATION,
    NEXT_STATE,
    SENSEMAKING,
    SWITCH,
    SWITCH_FORAGE,
    SWITCH_SENSE,
)
from userlearn.ingest import DEFAULT_MAX_ZOOM
from userlearn.learners import Learner

KINDS = ("stationary_bandit", "switching_bandit", "mdp_policy", "mdp_policy_switch",
         "tableau_synthetic")
SWITCHING = ("switching_bandit", "mdp_policy_switch")
BANDIT_KINDS = ("stationary_bandit", "switching_bandit")
DATASET = "synthetic"
TASK = "task1"


def _arm_names(n: int) -> list[str]:
    return [f"arm{i}" for i in range(n)]


@dataclass(frozen=True)
class SimScenario:
    """Parameters of a synthetic population.

    Bandit kinds pick arms from ``preference`` (and ``preference_after``
    once the switch step is reached) and draw Bernoulli rewards with
    ``means``. MDP kinds keep the current exploration stage with
    probability ``stay`` (``stay_after`` after the switch) and otherwise
    move to a neighbouring stage; leaving Navigation goes to Sensemaking
    with probability ``sense_bias`` (``sense_bias_after``). The tableau kind picks
    ``set_size`` attributes uniformly from ``n_items`` at every step.
    """

    kind: str
    horizon: int = 200
    users: int = 20
    seed: int = 0
    arms: tuple[str, ...] = ()
    means: tuple[float, ...] = (0.9, 0.1, 0.1, 0.1)
    means_after: tuple[float, ...] | None = None
    preference: tuple[float, ...] | str = "best"
    preference_after: tuple[float, ...] | None = None
    switch_point: float = 0.5
    stay: float = 0.6
    stay_after: float = 0.2
    sense_bias: float = 0.5
    sense_bias_after: float = 0.9
    n_items: int = 22
    set_size: int = 1
    goal_size: int = 3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"kind: expected one of {KINDS}, got {self.kind!r}")
        if self.horizon < 10:
            raise UsageError("horizon: must be at least 10")
        if self.users < 1:
            raise UsageError("users: must be at least 1")
        if self.kind in SWITCHING and not 0.0 < self.switch_point < 1.0:
            raise UsageError("switch_point: must lie in (0, 1)")
        means = tuple(float(m) for m in self.means)
        object.__setattr__(self, "means", means)
        if any(not 0.0 <= m <= 1.0 for m in means):
            raise UsageError("means: Bernoulli means must lie in [0, 1]")
        if not self.arms:
            object.__setattr__(self, "arms", tuple(_arm_names(len(means))))
        object.__setattr__(self, "arms", tuple(str(a) for a in self.arms))
        if len(self.arms) != len(means):
            raise UsageError("arms: one name per Bernoulli mean")
        if self.means_after is not None:
            object.__setattr__(self, "means_after", tuple(float(m) for m in self.means_after))
            if len(self.means_after) != len(means):
                raise UsageError("means_after: length must match means")
        if self.preference != "best":
            object.__setattr__(self, "preference", self._check_probs("preference", self.preference))
        if self.preference_after is not None:
            object.__setattr__(self, "preference_after",
                               self._check_probs("preference_after", self.preference_after))
        if self.kind == "switching_bandit" and self.preference_after is None:
            raise UsageError("preference_after: required for switching_bandit")
        for name in ("stay", "stay_after", "sense_bias", "sense_bias_after"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise UsageError(f"{name}: must lie in [0, 1]")
        if self.kind == "tableau_synthetic":
            if not 1 <= self.set_size <= self.n_items:
                raise UsageError("set_size: must lie in [1, n_items]")
            if not 1 <= self.goal_size <= self.n_items:
                raise UsageError("goal_size: must lie in [1, n_items]")

    def _check_probs(self, name: str, probs) -> tuple[float, ...]:
        if isinstance(probs, str):
            raise UsageError(f"{name}: expected a probability list or 'best'")
        p = tuple(float(v) for v in probs)
        if len(p) != len(self.arms) or any(v < 0 for v in p) or not math.isclose(sum(p), 1.0, abs_tol=1e-9):
            raise UsageError(f"{name}: expected {len(self.arms)} probabilities summing to 1")
        return p

    @property
    def switch_step(self) -> int | None:
        """First step generated by the post-switch policy."""
        if self.kind not in SWITCHING:
            return None
        return math.ceil(self.switch_point * self.horizon - 1e-9)

    def switched(self, t: int) -> bool:
        s = self.switch_step
        return s is not None and t >= s

    def preference_at(self, t: int) -> np.ndarray:
        if self.switched(t) and self.preference_after is not None:
            return np.asarray(self.preference_after)
        if self.preference == "best":
            p = np.zeros(len(self.arms))
            p[int(np.argmax(self.means_at(t)))] = 1.0
            return p
        return np.asarray(self.preference)

    def means_at(self, t: int) -> np.ndarray:
        if self.switched(t) and self.means_after is not None:
            return np.asarray(self.means_after)
        return np.asarray(self.means)

    def optimal_mean(self, t: int) -> float:
        if self.kind not in BANDIT_KINDS:
            raise UsageError(f"scenario kind {self.kind!r} has no known optimal reward")
        return float(np.max(self.means_at(t)))

    @property
    def study(self) -> Study:
        if self.kind in BANDIT_KINDS:
            return Study.IMMENS
        if self.kind == "tableau_synthetic":
            return Study.TABLEAU
        return Study.FORECACHE

    @property
    def attributes(self) -> list[str]:
        width = len(str(self.n_items - 1))
        return [f"attr{i:0{width}d}" for i in range(self.n_items)]

    def ground_truth(self) -> dict[str, frozenset]:
        return {TASK: frozenset(self.attributes[: self.goal_size])}

    def consolidation(self) -> dict[str, str]:
        return {a: a for a in self.attributes}

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], **overrides) -> "SimScenario":
        if not isinstance(data, Mapping):
            raise UsageError("scenario: expected a mapping at the top level")
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise UsageError(f"scenario: unknown keys {unknown}")
        kwargs = dict(data)
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        if "kind" not in kwargs:
            raise UsageError("kind: missing")
        for key in ("arms", "means", "means_after", "preference_after"):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(kwargs[key])
        if isinstance(kwargs.get("preference"), list):
            kwargs["preference"] = tuple(kwargs["preference"])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "SimScenario":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
            data = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
        except (OSError, json.JSONDecodeError, yaml.YAMLError) as exc:
            raise UsageError(f"scenario {path}: {exc}") from None
        return cls.from_mapping(data or {}, **overrides)

    def to_mapping(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


# --- generators --------------------------------------------------------------

def _bandit_session(sc: SimScenario, u: int, rng: np.random.Generator) -> list[Event]:
    u_arm = rng.random(sc.horizon)
    u_win = rng.random(sc.horizon)
    events = []
    for t in range(sc.horizon):
        cdf = np.cumsum(sc.preference_at(t))
        a = min(int(np.searchsorted(cdf, u_arm[t], side="right")), len(sc.arms) - 1)
        win = u_win[t] < sc.means_at(t)[a]
        events.append(_event(sc, u, t, "select", {"visualization": sc.arms[a]},
                             Annotation.INSIGHT if win else Annotation.NONE))
    return events


def _zoom_for(stage: str, rng: np.random.Generator, coarse: int) -> int:
    if stage == FORAGING:
        return int(rng.integers(0, coarse + 1))
    if stage == SENSEMAKING:
        return int(rng.integers(coarse + 1, DEFAULT_MAX_ZOOM + 1))
    return int(rng.integers(0, DEFAULT_MAX_ZOOM + 1))


def _mdp_session(sc: SimScenario, u: int, rng: np.random.Generator) -> list[Event]:
    coarse = DEFAULT_COARSE_THRESHOLD
    stage = FORAGING
    events = []
    for t in range(sc.horizon):
        if t > 0:
            stay = sc.stay_after if sc.switched(t) else sc.stay
            if rng.random() >= stay:
                if stage == NAVIGATION:
                    bias = sc.sense_bias_after if sc.switched(t) else sc.sense_bias
                    move = SWITCH_SENSE if rng.random() < bias else SWITCH_FORAGE
                else:
                    move = SWITCH
                stage = NEXT_STATE[(stage, move)]
        raw = "zoom" if stage == NAVIGATION else "pan"
        params = {"zoom_level": _zoom_for(stage, rng, coarse),
                  "snow_level": round(float(rng.random()), 4)}
        events.append(_event(sc, u, t, raw, params, Annotation.NONE))
    return events


def _tableau_session(sc: SimScenario, u: int, rng: np.random.Generator) -> list[Event]:
    attrs = sc.attributes
    events = []
    for t in range(sc.horizon):
        pick = sorted(rng.choice(len(attrs), size=sc.set_size, replace=False))
        events.append(_event(sc, u, t, "select", {"attributes": [attrs[i] for i in pick]},
                             Annotation.NONE))
    return events


def _event(sc: SimScenario, u: int, t: int, raw: str, params: dict, ann: Annotation) -> Event:
    params = dict(params, dataset=DATASET, task=TASK)
    return Event(session_id=f"sim-{u:03d}", user_id=f"u{u:03d}", study=sc.study, index=t,
                 raw_action=raw, params=params, annotation=ann)


_GENERATORS = {
    "stationary_bandit": _bandit_session,
    "switching_bandit": _bandit_session,
    "mdp_policy": _mdp_session,
    "mdp_policy_switch": _mdp_session,
    "tableau_synthetic": _tableau_session,
}


def simulate_user(scenario: SimScenario, u: int) -> Session:
    rng = make_rng([scenario.seed, u])
    events = _GENERATORS[scenario.kind](scenario, u, rng)
    return Session(tuple(events), {"dataset": DATASET, "task": TASK})


def simulate(scenario: SimScenario) -> list[Session]:
    return [simulate_user(scenario, u) for u in range(scenario.users)]


# --- regret ------------------------------------------------------------------

@dataclass(frozen=True)
class RegretRecord:
    mu_star: np.ndarray
    increments: np.ndarray
    cumulative: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "cumulative", np.cumsum(self.increments))

    def at(self, t: int) -> float:
        """Cumulative regret after ``t`` steps."""
        return float(self.cumulative[t - 1]) if t > 0 else 0.0


def measure_regret(learner: Learner, scenario: SimScenario, horizon: int | None = None,
                   seed: int | None = None) -> RegretRecord:
    """Run ``learner`` against the scenario's reward model.

    Each increment is the optimal expected reward minus the expected reward
    of the chosen arm, so the record carries no reward-sampling noise of its
    own; sampled Bernoulli rewards are only fed back to the learner.
    """
    if scenario.kind not in BANDIT_KINDS:
        raise UsageError(f"scenario kind {scenario.kind!r} has no known optimal reward")
    horizon = horizon or scenario.horizon
    rng = make_rng([scenario.seed if seed is None else seed, 7])
    mu_star = np.empty(horizon)
    inc = np.empty(horizon)
    for t in range(horizon):
        means = scenario.means_at(t)
        arm = learner.predict(1).top
        a = scenario.arms.index(arm)
        mu_star[t] = float(np.max(means))
        inc[t] = mu_star[t] - means[a]
        reward = 1.0 if rng.random() < means[a] else 0.0
        learner.observe(Step(action=arm, reward=reward))
    return RegretRecord(mu_star, inc)


def uniform_regret_per_step(scenario: SimScenario, t: int = 0) -> float:
    means = scenario.means_at(t)
    return float(np.max(means) - np.mean(means))


def bandit_space(scenario: SimScenario) -> ActionSpace:
    return ActionSpace.discrete(scenario.arms)
