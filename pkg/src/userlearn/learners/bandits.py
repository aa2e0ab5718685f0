"""Mortal-arm, contextual and combinatorial bandits."""

from __future__ import annotations

import itertools
from math import comb
from typing import Hashable, Sequence

import numpy as np

from userlearn.core import ActionSpace, Prediction, UsageError, rank_top_k
from userlearn.learners.base import Learner, LearnerConfig, PolicyState
from userlearn.learners.heuristics import _ids, random_select

# status ranks for the state-oblivious mortal policy
KEPT, TRIAL, FRESH, ABANDONED = 3.0, 2.0, 1.0, 0.0


def mortal_scores(policy: PolicyState, config: LearnerConfig) -> np.ndarray:
    """Ranking keys: exploit kept arms, then finish trials, then try fresh arms."""
    counts, means = policy.counts, policy.means
    done = counts >= config.mortal_n
    kept = done & (means >= config.mortal_keep)
    status = np.select([kept, done, counts > 0], [KEPT, ABANDONED, TRIAL], default=FRESH)
    secondary = np.where(done, np.clip(means, -1e5, 1e5), np.where(counts > 0, counts, 0.0))
    return status * 1e6 + secondary


def mortal_bandit_step(policy: PolicyState, space: ActionSpace, config: LearnerConfig,
                       rng: np.random.Generator, k: int = 1, s: Hashable = None) -> Prediction:
    idx = space.allowed_indices(s)
    return rank_top_k(mortal_scores(policy, config)[idx], _ids(space, idx), k, rng)


class MortalBanditLearner(Learner):
    """Pool of K arms with finite lifetimes; a dead arm re-enters fresh."""

    name = "mortal_budgeted"
    mode = "budgeted"

    def reset(self):
        n = self.space.n
        self.state.deaths = np.zeros(n, dtype=int)
        self.state.lifetimes = np.array([self._draw_lifetime() for _ in range(n)], dtype=float)

    def _draw_lifetime(self) -> float:
        if self.mode == "budgeted":
            return float(self.rng.geometric(1.0 / max(self.config.mortal_lifetime, 1.0)))
        return np.inf

    def _kill(self, i: int) -> None:
        self.state.deaths[i] += 1
        self.state.sums[i] = 0.0
        self.state.counts[i] = 0.0
        self.state.lifetimes[i] = self._draw_lifetime()

    def _predict(self, k, state, context, rng):
        return mortal_bandit_step(self.state, self.space, self.config, rng, k, state)

    def _observe(self, step):
        chosen = self.chosen(step)
        self.state.record(chosen, step.reward)
        if self.mode == "budgeted":
            for i in chosen:
                self.state.lifetimes[i] -= 1
                if self.state.lifetimes[i] <= 0:
                    self._kill(i)
        else:
            dies = self.rng.random(self.space.n) < self.config.mortal_p
            for i in np.flatnonzero(dies):
                self._kill(int(i))


class TimedMortalBanditLearner(MortalBanditLearner):
    name = "mortal_timed"
    mode = "timed"


def contextual_select(policy: PolicyState, context: Hashable, space: ActionSpace,
                      config: LearnerConfig, rng: np.random.Generator, k: int = 1,
                      tables: dict | None = None, s: Hashable = None) -> Prediction:
    """Epsilon-greedy over per-context means, falling back to global means."""
    eps = config.epsilon0
    if eps >= 1.0 or (eps > 0.0 and rng.random() < eps):
        return random_select(space, rng, k, s)
    tables = tables or {}
    if context in tables and tables[context][1].sum() > 0:
        sums, counts = tables[context]
        means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    else:
        means = policy.means
    idx = space.allowed_indices(s)
    return rank_top_k(means[idx], _ids(space, idx), k, rng)


class ContextualBanditLearner(Learner):
    name = "contextual"

    def reset(self):
        self.tables: dict = {}

    def _predict(self, k, state, context, rng):
        return contextual_select(self.state, context, self.space, self.config, rng, k,
                                 self.tables, state)

    def _observe(self, step):
        chosen = self.chosen(step)
        self.state.record(chosen, step.reward)
        if step.context not in self.tables:
            self.tables[step.context] = (np.zeros(self.space.n), np.zeros(self.space.n))
        sums, counts = self.tables[step.context]
        for i in chosen:
            sums[i] += step.reward
            counts[i] += 1


class SubsetCatalog:
    """All fixed-size subsets of an item universe with a membership matrix."""

    MAX_SUBSETS = 200_000

    def __init__(self, n_items: int, size: int):
        if n_items < size:
            raise UsageError(f"universe of {n_items} items is smaller than subset size {size}")
        if comb(n_items, size) > self.MAX_SUBSETS:
            raise UsageError(f"C({n_items},{size}) subsets exceed {self.MAX_SUBSETS}")
        self.size = size
        self.subsets = list(itertools.combinations(range(n_items), size))
        self.member = np.zeros((len(self.subsets), n_items), dtype=bool)
        for j, sub in enumerate(self.subsets):
            self.member[j, list(sub)] = True

    def __len__(self) -> int:
        return len(self.subsets)

    def consistent_with(self, items: Sequence[int]) -> np.ndarray:
        """Subsets inside ``items`` (large selections) or covering it (small ones)."""
        items = list(items)
        if len(items) >= self.size:
            outside = np.ones(self.member.shape[1], dtype=bool)
            outside[items] = False
            return np.flatnonzero(~self.member[:, outside].any(axis=1))
        return np.flatnonzero(self.member[:, items].all(axis=1))


def combinatorial_distribution(policy: PolicyState, config: LearnerConfig) -> np.ndarray:
    lw = policy.log_weights
    q = np.exp(lw - lw.max())
    q /= q.sum()
    return (1.0 - config.gamma_mix) * q + config.gamma_mix / lw.size


def combinatorial_select(policy: PolicyState, space: ActionSpace, config: LearnerConfig,
                         rng: np.random.Generator, catalog: SubsetCatalog) -> Prediction:
    p = combinatorial_distribution(policy, config)
    j = int(rng.choice(p.size, p=p))
    members = np.array(catalog.subsets[j])
    marginal = catalog.member[:, members].T @ p
    return rank_top_k(marginal, [space.item_universe[i] for i in members], members.size, rng)


def combinatorial_update(policy: PolicyState, chosen: Sequence[int] | int, cost: float,
                         config: LearnerConfig) -> PolicyState:
    """Exponential-weights step with an importance-weighted pseudo-loss.

    ``chosen`` may list several subset indices when the observed selection
    is only known up to a set of subsets; their joint probability is used.
    """
    chosen = np.atleast_1d(np.asarray(chosen, dtype=int))
    if cost == 0.0 or chosen.size == 0:
        return policy
    p = combinatorial_distribution(policy, config)
    p_chosen = float(p[chosen].sum())
    if p_chosen <= 0.0:
        raise RuntimeError("chosen subsets have zero probability")
    policy.log_weights[chosen] -= config.eta * cost / p_chosen
    return policy


class CombinatorialBanditLearner(Learner):
    name = "combinatorial"

    def reset(self):
        if self.space.kind != "subset":
            raise UsageError("combinatorial bandit needs a subset action space")
        self.catalog = SubsetCatalog(len(self.space.item_universe), self.space.subset_size)
        self.state.log_weights = np.zeros(len(self.catalog))

    def _predict(self, k, state, context, rng):
        return combinatorial_select(self.state, self.space, self.config, rng, self.catalog)

    def _observe(self, step):
        chosen = self.chosen(step)
        self.state.record(chosen, step.reward)
        if not chosen:
            return
        m = self.space.subset_size
        cost = 1.0 - min(max(step.reward, 0.0), m) / m
        combinatorial_update(self.state, self.catalog.consistent_with(chosen), cost, self.config)
