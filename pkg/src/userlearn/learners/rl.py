"""Tabular value-based and policy-gradient learners.

Policies are softmax distributions over per-state logits; the action set in a
state may be restricted by ``ActionSpace.allowed``, in which case softmax,
gradients and bootstrapped maxima only range over the allowed actions.
"""

from __future__ import annotations

from typing import Hashable, Sequence

import numpy as np

from userlearn.core import Step, rank_top_k, sample_top_k, softmax
from userlearn.learners.base import Learner, LearnerConfig, PolicyState
from userlearn.learners.heuristics import _ids, random_select


def _all(policy: PolicyState) -> np.ndarray:
    return np.arange(policy.n_actions)


def qlearning_update(policy: PolicyState, s: Hashable, a: int, r: float, s_next: Hashable,
                     config: LearnerConfig, allowed_next: Sequence[int] | None = None,
                     terminal: bool = False) -> PolicyState:
    q = policy.table("q_table", s)
    if terminal or s_next is None:
        target = r
    else:
        q_next = policy.table("q_table", s_next)
        idx = _all(policy) if allowed_next is None else np.asarray(allowed_next)
        target = r + config.gamma_discount * q_next[idx].max()
    q[a] += config.alpha * (target - q[a])
    return policy


def sarsa_update(policy: PolicyState, s: Hashable, a: int, r: float, s_next: Hashable,
                 a_next: int | None, config: LearnerConfig) -> PolicyState:
    q = policy.table("q_table", s)
    if s_next is None or a_next is None:
        target = r
    else:
        target = r + config.gamma_discount * policy.table("q_table", s_next)[a_next]
    q[a] += config.alpha * (target - q[a])
    return policy


def _policy_gradient_step(policy: PolicyState, s, a: int, weight: float,
                          allowed: Sequence[int] | None) -> None:
    """logits(s, .) += weight * grad log pi(a|s) over the allowed actions."""
    z = policy.table("logits", s)
    idx = _all(policy) if allowed is None else np.asarray(allowed)
    pi = softmax(z[idx])
    grad = -pi
    grad[np.flatnonzero(idx == a)[0]] += 1.0
    z[idx] += weight * grad


def reinforce_update(policy: PolicyState, episode: Sequence[tuple], config: LearnerConfig,
                     allowed: dict | None = None) -> PolicyState:
    """Monte-Carlo policy gradient over one complete episode of (s, a, r)."""
    if not episode:
        return policy
    g = config.gamma_discount
    rewards = np.array([r for _, _, r in episode], dtype=float)
    returns = np.zeros_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + g * acc
        returns[t] = acc
    for t, (s, a, _) in enumerate(episode):
        w = config.alpha * (g ** t) * returns[t]
        if w != 0.0:
            _policy_gradient_step(policy, s, a, w, None if allowed is None else allowed.get(s))
    return policy


def actor_critic_update(policy: PolicyState, s: Hashable, a: int, r: float, s_next: Hashable,
                        terminal: bool, config: LearnerConfig,
                        allowed: Sequence[int] | None = None) -> PolicyState:
    v_next = 0.0 if terminal or s_next is None else policy.v_table.get(s_next, 0.0)
    v = policy.v_table.get(s, 0.0)
    delta = r + config.gamma_discount * v_next - v
    if delta == 0.0:
        return policy
    policy.v_table[s] = v + config.alpha_v * delta
    _policy_gradient_step(policy, s, a, config.alpha * delta, allowed)
    return policy


def _terminal(step: Step) -> bool:
    return step.next_state is None or bool(step.info.get("terminal", False))


class _TabularLearner(Learner):
    supports_subset = False

    def _allowed(self, s) -> np.ndarray:
        return self.space.allowed_indices(s)

    def _softmax_predict(self, k, state, rng):
        idx = self._allowed(state)
        pi = softmax(self.state.peek("logits", state)[idx])
        return sample_top_k(pi, _ids(self.space, idx), k, rng)

    def _eps_greedy_q(self, k, state, rng):
        eps = self.config.epsilon0
        if eps >= 1.0 or (eps > 0.0 and rng.random() < eps):
            return random_select(self.space, rng, k, state)
        idx = self._allowed(state)
        return rank_top_k(self.state.peek("q_table", state)[idx], _ids(self.space, idx), k, rng)


class QLearningLearner(_TabularLearner):
    name = "qlearning"

    def _predict(self, k, state, context, rng):
        return self._eps_greedy_q(k, state, rng)

    def _observe(self, step):
        a = self.space.index(step.action)
        qlearning_update(self.state, step.state, a, step.reward, step.next_state, self.config,
                         self._allowed(step.next_state), _terminal(step))
        self.state.record([a], step.reward)


class SarsaLearner(_TabularLearner):
    """SARSA; each update waits for the action actually taken next."""

    name = "sarsa"

    def reset(self):
        self._pending: tuple | None = None

    def _predict(self, k, state, context, rng):
        return self._eps_greedy_q(k, state, rng)

    def _flush(self, a_next: int | None, s_next_seen=None):
        s, a, r, s_next = self._pending
        if a_next is not None and s_next_seen != s_next:
            a_next = None
        sarsa_update(self.state, s, a, r, s_next, a_next, self.config)
        self._pending = None

    def _observe(self, step):
        a = self.space.index(step.action)
        if self._pending is not None:
            self._flush(a, step.state)
        self._pending = (step.state, a, step.reward, step.next_state)
        if _terminal(step):
            self._flush(None)
        self.state.record([a], step.reward)


class ReinforceLearner(_TabularLearner):
    """REINFORCE; logits change only when an episode is closed."""

    name = "reinforce"

    def reset(self):
        self._episode: list[tuple] = []

    def _predict(self, k, state, context, rng):
        return self._softmax_predict(k, state, rng)

    def _observe(self, step):
        a = self.space.index(step.action)
        self._episode.append((step.state, a, step.reward))
        self.state.record([a], step.reward)
        if _terminal(step):
            self.end_episode()

    def end_episode(self):
        allowed = None
        if self.space.allowed is not None:
            allowed = {s: self._allowed(s) for s, _, _ in self._episode}
        reinforce_update(self.state, self._episode, self.config, allowed)
        self._episode = []


class ActorCriticLearner(_TabularLearner):
    name = "actor_critic"

    def _predict(self, k, state, context, rng):
        return self._softmax_predict(k, state, rng)

    def _observe(self, step):
        a = self.space.index(step.action)
        actor_critic_update(self.state, step.state, a, step.reward, step.next_state,
                            _terminal(step), self.config, self._allowed(step.state))
        self.state.record([a], step.reward)
