"""Random, win-stay-lose-shift, greedy and epsilon-greedy family."""

from __future__ import annotations

from typing import Hashable

import numpy as np

from userlearn.core import ActionSpace, Prediction, rank_top_k, sigmoid
from userlearn.learners.base import Learner, LearnerConfig, PolicyState


def _ids(space: ActionSpace, idx: np.ndarray) -> list:
    return [space.actions[i] for i in idx]


def random_select(space: ActionSpace, rng: np.random.Generator, k: int = 1,
                  s: Hashable = None) -> Prediction:
    idx = space.allowed_indices(s)
    return rank_top_k(np.zeros(idx.size), _ids(space, idx), k, rng)


def greedy_select(policy: PolicyState, space: ActionSpace, rng: np.random.Generator,
                  k: int = 1, s: Hashable = None) -> Prediction:
    idx = space.allowed_indices(s)
    return rank_top_k(policy.means[idx], _ids(space, idx), k, rng)


def wsls_step(policy: PolicyState, space: ActionSpace, config: LearnerConfig,
              rng: np.random.Generator, k: int = 1, s: Hashable = None) -> Prediction:
    if policy.last_reward is None:
        return random_select(space, rng, k, s)
    idx = space.allowed_indices(s)
    last = np.isin(idx, policy.last_action)
    if policy.last_reward > config.win_threshold:
        scores = last.astype(float)
    else:
        # a lost action stays rankable below the alternatives so k is honoured
        scores = (~last).astype(float) if (~last).any() else np.ones(idx.size)
    return rank_top_k(scores, _ids(space, idx), k, rng)


def epsilon_greedy_select(policy: PolicyState, space: ActionSpace, config: LearnerConfig,
                          rng: np.random.Generator, k: int = 1, s: Hashable = None) -> Prediction:
    eps = policy.epsilon_now
    # the coin is only flipped for 0 < eps < 1 so the endpoints share the
    # random streams of greedy_select and random_select exactly
    if eps >= 1.0 or (eps > 0.0 and rng.random() < eps):
        return random_select(space, rng, k, s)
    return greedy_select(policy, space, rng, k, s)


def adaptive_epsilon_update(policy: PolicyState, config: LearnerConfig) -> PolicyState:
    """Reset epsilon from the change in mean reward between adaptation windows."""
    window = policy.window_rewards
    current = float(np.mean(window)) if window else 0.0
    delta = (current - policy.prev_window_mean) * config.adapt_f
    policy.epsilon_now = sigmoid(delta)
    policy.prev_window_mean = current
    policy.window_rewards = []
    return policy


class RandomLearner(Learner):
    name = "random"

    def _predict(self, k, state, context, rng):
        return random_select(self.space, rng, k, state)

    def _observe(self, step):
        self.state.record(self.chosen(step), step.reward)


class WSLSLearner(Learner):
    name = "wsls"

    def _predict(self, k, state, context, rng):
        return wsls_step(self.state, self.space, self.config, rng, k, state)

    def _observe(self, step):
        self.state.record(self.chosen(step), step.reward)


class GreedyLearner(Learner):
    name = "greedy"

    def _predict(self, k, state, context, rng):
        return greedy_select(self.state, self.space, rng, k, state)

    def _observe(self, step):
        self.state.record(self.chosen(step), step.reward)


class EpsilonGreedyLearner(Learner):
    name = "epsilon_greedy"

    def reset(self):
        self.state.epsilon_now = self.config.epsilon0

    def _predict(self, k, state, context, rng):
        return epsilon_greedy_select(self.state, self.space, self.config, rng, k, state)

    def _observe(self, step):
        self.state.record(self.chosen(step), step.reward)


class DecayingEpsilonGreedyLearner(EpsilonGreedyLearner):
    name = "epsilon_greedy_decay"

    def _observe(self, step):
        super()._observe(step)
        c = self.config
        self.state.epsilon_now = max(c.epsilon_min, self.state.epsilon_now * c.decay)


class AdaptiveEpsilonGreedyLearner(EpsilonGreedyLearner):
    name = "adaptive_epsilon_greedy"

    def _observe(self, step):
        super()._observe(step)
        self.state.window_rewards.append(step.reward)
        if len(self.state.window_rewards) >= self.config.adapt_l:
            adaptive_epsilon_update(self.state, self.config)
