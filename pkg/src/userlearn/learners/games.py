"""Bush & Mosteller and Roth & Erev reinforcement models."""

from __future__ import annotations

import numpy as np

from userlearn.core import sample_top_k
from userlearn.learners.base import Learner, LearnerConfig, PolicyState

S_FLOOR = 1e-6
S_INIT = 1.0


def bush_mosteller_update(policy: PolicyState, chosen: int, reward: float,
                          config: LearnerConfig) -> PolicyState:
    p = policy.probs
    pc = p[chosen]
    if reward - config.aspiration >= 0:
        new = p - config.alpha * p
        new[chosen] = pc + config.alpha * (1.0 - pc)
    else:
        new = p + config.beta * (1.0 - p)
        new[chosen] = pc - config.beta * pc
        # the negative branch only sums to one for two actions
        new /= new.sum()
    policy.probs = new
    return policy


def roth_erev_update(policy: PolicyState, chosen: int, reward: float,
                     config: LearnerConfig) -> PolicyState:
    s = policy.propensity
    s[chosen] = max(S_FLOOR, s[chosen] * (1.0 - config.sigma) + reward)
    policy.probs = s / s.sum()
    return policy


def _sample_allowed(learner: Learner, probs: np.ndarray, k, state, rng):
    idx = learner.space.allowed_indices(state)
    p = probs[idx]
    total = p.sum()
    p = p / total if total > 0 else np.full(idx.size, 1.0 / idx.size)
    return sample_top_k(p, [learner.space.actions[i] for i in idx], k, rng)


class BushMostellerLearner(Learner):
    name = "bush_mosteller"

    def reset(self):
        self.state.probs = np.full(self.space.n, 1.0 / self.space.n)

    def _predict(self, k, state, context, rng):
        return _sample_allowed(self, self.state.probs, k, state, rng)

    def _observe(self, step):
        chosen = self.chosen(step)
        for i in chosen:
            bush_mosteller_update(self.state, i, step.reward, self.config)
        self.state.record(chosen, step.reward)


class RothErevLearner(Learner):
    name = "roth_erev"

    def reset(self):
        self.state.propensity = np.full(self.space.n, S_INIT)
        self.state.probs = self.state.propensity / self.state.propensity.sum()

    def _predict(self, k, state, context, rng):
        return _sample_allowed(self, self.state.probs, k, state, rng)

    def _observe(self, step):
        chosen = self.chosen(step)
        for i in chosen:
            roth_erev_update(self.state, i, step.reward, self.config)
        self.state.record(chosen, step.reward)
