"""Independent oracles and drivers shared by the test modules.

Nothing here calls into the code under test except the small drivers,
which only use the public learner interface.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np

from userlearn.core import ActionSpace, Step


def midranks(values):
    """Average ranks (1-based) by explicit counting."""
    out = []
    for v in values:
        below = sum(1 for w in values if w < v)
        equal = sum(1 for w in values if w == v)
        out.append(Fraction(2 * below + equal + 1, 2))
    return out


def wilcoxon_oracle(d):
    """(min(W+, W-), two-sided p) by enumerating every sign assignment."""
    d = [x for x in d if x != 0]
    n = len(d)
    if n == 0:
        return 0.0, 1.0
    ranks = midranks([abs(x) for x in d])
    w_plus = sum(r for r, x in zip(ranks, d) if x > 0)
    w_minus = sum(r for r, x in zip(ranks, d) if x < 0)
    total = sum(ranks)
    center = total / 2
    dev = abs(w_plus - center)
    extreme = 0
    for signs in itertools.product((0, 1), repeat=n):
        s = sum(r for r, on in zip(ranks, signs) if on)
        if abs(s - center) >= dev:
            extreme += 1
    return float(min(w_plus, w_minus)), extreme / 2 ** n


def mannwhitney_oracle(x, y):
    """(min(U_x, U_y), two-sided p) by enumerating every group assignment."""
    n1, n2 = len(x), len(y)
    ranks = midranks(list(x) + list(y))
    r1 = sum(ranks[:n1])
    u1 = r1 - Fraction(n1 * (n1 + 1), 2)
    stat = min(u1, n1 * n2 - u1)
    center = Fraction(n1 * (n1 + n2 + 1), 2)
    dev = abs(r1 - center)
    extreme = total = 0
    for combo in itertools.combinations(range(n1 + n2), n1):
        total += 1
        if abs(sum(ranks[i] for i in combo) - center) >= dev:
            extreme += 1
    return float(stat), extreme / total


def log_softmax_entry(z, a):
    m = max(z)
    return z[a] - m - math.log(sum(math.exp(v - m) for v in z))


def fd_grad_log_policy(z, a, h=1e-5):
    """Central finite differences of log pi(a | z) with respect to each logit."""
    z = [float(v) for v in z]
    g = []
    for i in range(len(z)):
        up = list(z)
        dn = list(z)
        up[i] += h
        dn[i] -= h
        g.append((log_softmax_entry(up, a) - log_softmax_entry(dn, a)) / (2 * h))
    return np.array(g)


# 2-state deterministic chain: "right" moves to / stays in state 1, paying 1
# only when already in state 1; "left" returns to state 0 for nothing.
CHAIN_SPACE = ActionSpace.discrete(["left", "right"])
CHAIN_OPTIMAL = {0: "right", 1: "right"}


def chain_transition(s, a):
    if a == "right":
        return 1, (1.0 if s == 1 else 0.0)
    return 0, 0.0


def run_chain(learner, steps, seed):
    rng = np.random.default_rng([seed, 99])
    s = 0
    for _ in range(steps):
        a = learner.predict(1, state=s, rng=rng).top
        s_next, r = chain_transition(s, a)
        learner.observe(Step(action=a, reward=r, state=s, next_state=s_next))
        s = s_next
    return {x: CHAIN_SPACE.actions[int(np.argmax(learner.state.peek("q_table", x)))] for x in (0, 1)}


def run_bernoulli(learner, means, steps, seed):
    """Drive a bandit learner; returns chosen arm indices and expected rewards."""
    rng = np.random.default_rng([seed, 98])
    arms = learner.space.actions
    chosen = np.empty(steps, dtype=int)
    for t in range(steps):
        arm = learner.predict(1, rng=rng).top
        a = arms.index(arm)
        chosen[t] = a
        learner.observe(Step(action=arm, reward=float(rng.random() < means[a])))
    return chosen
