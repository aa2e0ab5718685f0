from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Hashable

import numpy as np

from userlearn.core import ActionSpace, Prediction, Step, UsageError, make_rng


@dataclass(frozen=True)
class LearnerConfig:
    alpha: float = 0.1
    beta: float = 0.1
    gamma_discount: float = 0.9
    epsilon0: float = 0.1
    decay: float = 0.99
    epsilon_min: float = 0.001
    sigma: float = 0.1
    adapt_l: int = 10
    adapt_f: float = 1.0
    aspiration: float = 0.0
    win_threshold: float = 0.0
    mortal_lifetime: float = 20.0
    mortal_p: float = 0.05
    mortal_n: int = 1
    mortal_keep: float = 0.1
    eta: float = 0.1
    gamma_mix: float = 0.05
    alpha_v: float = 0.1

    _UNIT = ("alpha", "beta", "gamma_discount", "epsilon0", "epsilon_min", "sigma", "gamma_mix", "alpha_v")

    def __post_init__(self):
        for name in self._UNIT:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise UsageError(f"{name}={v} outside [0, 1]")
        if not 0.0 < self.decay <= 1.0:
            raise UsageError(f"decay={self.decay} outside (0, 1]")
        if not 0.0 < self.mortal_p <= 1.0:
            raise UsageError(f"mortal_p={self.mortal_p} outside (0, 1]")
        if self.adapt_l < 1 or self.mortal_n < 1:
            raise UsageError("adapt_l and mortal_n must be positive integers")
        if self.adapt_f <= 0 or self.mortal_lifetime <= 0 or self.eta <= 0:
            raise UsageError("adapt_f, mortal_lifetime and eta must be positive")

    def replace(self, **params: Any) -> "LearnerConfig":
        known = {f.name for f in dataclasses.fields(self)}
        unknown = set(params) - known
        if unknown:
            raise UsageError(f"unknown hyperparameters: {sorted(unknown)}")
        return dataclasses.replace(self, **params)


@dataclass
class PolicyState:
    """Mutable internals shared by the learner catalog.

    Tables keyed by MDP state hold one array over the action space, so
    ``q_table[s][a]`` is Q(s, a). Combinatorial weights are stored as logs;
    ``weights`` and ``total_weight`` expose them in linear scale.
    """

    n_actions: int
    probs: np.ndarray | None = None
    q_table: dict = field(default_factory=dict)
    v_table: dict = field(default_factory=dict)
    propensity: np.ndarray | None = None
    logits: dict = field(default_factory=dict)
    log_weights: np.ndarray | None = None
    sums: np.ndarray | None = None
    counts: np.ndarray | None = None
    lifetimes: np.ndarray | None = None
    deaths: np.ndarray | None = None
    last_action: tuple = ()
    last_reward: float | None = None
    epsilon_now: float = 0.0
    window_rewards: list = field(default_factory=list)
    prev_window_mean: float = 0.0

    def __post_init__(self):
        if self.sums is None:
            self.sums = np.zeros(self.n_actions)
        if self.counts is None:
            self.counts = np.zeros(self.n_actions)

    @property
    def means(self) -> np.ndarray:
        return np.divide(self.sums, self.counts, out=np.zeros_like(self.sums), where=self.counts > 0)

    @property
    def weights(self) -> np.ndarray | None:
        return None if self.log_weights is None else np.exp(self.log_weights)

    @property
    def total_weight(self) -> float | None:
        w = self.weights
        return None if w is None else float(w.sum())

    def table(self, which: str, s: Hashable) -> np.ndarray:
        tab = getattr(self, which)
        if s not in tab:
            tab[s] = np.zeros(self.n_actions)
        return tab[s]

    def peek(self, which: str, s: Hashable) -> np.ndarray:
        """Like ``table`` but never inserts a missing state."""
        tab = getattr(self, which)
        return tab[s] if s in tab else np.zeros(self.n_actions)

    def record(self, chosen: list[int], reward: float) -> None:
        for i in chosen:
            self.sums[i] += reward
            self.counts[i] += 1
        self.last_action = tuple(chosen)
        self.last_reward = reward


class Learner:
    """Common learner contract.

    ``predict`` never mutates the learner. Without an explicit generator it
    draws from one derived from (seed, number of observations), so repeated
    calls on the same state agree.
    """

    name = "base"
    supports_subset = True

    def __init__(self, space: ActionSpace, config: LearnerConfig | None = None, seed: int = 0):
        if space.kind == "subset" and not self.supports_subset:
            raise UsageError(f"{self.name} does not support subset action spaces")
        self.space = space
        self.config = config or LearnerConfig()
        self.seed = int(seed)
        self.t = 0
        self.rng = make_rng([self.seed, 1])
        self.state = PolicyState(space.n)
        self.reset()

    def reset(self) -> None:
        pass

    def predict(self, k: int = 1, *, state: Hashable = None, context: Hashable = None,
                rng: np.random.Generator | None = None) -> Prediction:
        if rng is None:
            rng = make_rng([self.seed, 0, self.t])
        return self._predict(k, state, context, rng)

    def observe(self, step: Step) -> None:
        self._observe(step)
        self.t += 1

    def end_episode(self) -> None:
        pass

    def _predict(self, k, state, context, rng) -> Prediction:
        raise NotImplementedError

    def _observe(self, step: Step) -> None:
        raise NotImplementedError

    def chosen(self, step: Step) -> list[int]:
        if self.space.kind == "subset":
            items = step.items or frozenset()
            return sorted(self.space.index(i) for i in items)
        return [self.space.index(step.action)]
