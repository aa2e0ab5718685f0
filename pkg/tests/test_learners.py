import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import fd_grad_log_policy
from userlearn.core import ActionSpace, Step, UsageError, make_rng
from userlearn.environments import mdp_space
from userlearn.learners import (
    DEFAULT_GRIDS,
    LEARNERS,
    LearnerConfig,
    PolicyState,
    SubsetCatalog,
    actor_critic_update,
    adaptive_epsilon_update,
    bush_mosteller_update,
    combinatorial_distribution,
    combinatorial_select,
    combinatorial_update,
    contextual_select,
    epsilon_greedy_select,
    greedy_select,
    make_learner,
    mortal_bandit_step,
    qlearning_update,
    random_select,
    reinforce_update,
    roth_erev_update,
    sarsa_update,
    wsls_step,
)

ARMS4 = ActionSpace.discrete(["a0", "a1", "a2", "a3"])


def _policy(n, sums=None, counts=None, **kw):
    p = PolicyState(n, **kw)
    if sums is not None:
        p.sums = np.asarray(sums, dtype=float)
        p.counts = np.asarray(counts, dtype=float)
    return p


def _freq(picks, ids):
    picks = list(picks)
    return np.array([picks.count(i) / len(picks) for i in ids])


# --- configuration --------------------------------------------------------------

def test_config_validation():
    with pytest.raises(UsageError):
        LearnerConfig(alpha=1.5)
    with pytest.raises(UsageError):
        LearnerConfig(decay=0.0)
    with pytest.raises(UsageError):
        LearnerConfig().replace(learning_rate=0.1)
    assert LearnerConfig().replace(alpha=0.3).alpha == 0.3


def test_default_grids_cover_catalog_and_validate():
    assert set(DEFAULT_GRIDS) == set(LEARNERS)
    for grid in DEFAULT_GRIDS.values():
        for name, values in grid.items():
            for v in values:
                LearnerConfig().replace(**{name: v})


def test_make_learner_rejects_unknown_and_unsupported():
    with pytest.raises(UsageError):
        make_learner("oracle", ARMS4)
    with pytest.raises(UsageError):
        make_learner("qlearning", ActionSpace.subset("abcd", 3))


# --- heuristics --------------------------------------------------------------------

def test_random_select_examples():
    rng = make_rng(0)
    picks = [random_select(ARMS4, rng).top for _ in range(10_000)]
    assert np.allclose(_freq(picks, ARMS4.actions), 0.25, atol=0.02)
    assert random_select(ActionSpace.discrete(["only"]), rng).top == "only"
    assert len(set(random_select(ARMS4, rng, k=3).ids)) == 3


def test_wsls_examples():
    space = ActionSpace.discrete(["a0", "a1", "a2"])
    rng = make_rng(1)
    win = _policy(3, last_action=(2,), last_reward=1.0)
    assert all(wsls_step(win, space, LearnerConfig(), rng).top == "a2" for _ in range(50))
    lose = _policy(3, last_action=(0,), last_reward=0.0)
    picks = [wsls_step(lose, space, LearnerConfig(), rng).top for _ in range(10_000)]
    f = _freq(picks, space.actions)
    assert f[0] == 0 and np.allclose(f[1:], 0.5, atol=0.02)
    fresh = ActionSpace.discrete(list("abcde"))
    picks = [wsls_step(_policy(5), fresh, LearnerConfig(), rng).top for _ in range(10_000)]
    assert np.allclose(_freq(picks, fresh.actions), 0.2, atol=0.02)


def test_greedy_examples():
    space = ActionSpace.discrete(["a0", "a1", "a2"])
    rng = make_rng(2)
    tied = _policy(3, sums=[0.2, 0.7, 0.7], counts=[1, 1, 1])
    picks = [greedy_select(tied, space, rng).top for _ in range(10_000)]
    f = _freq(picks, space.actions)
    assert f[0] == 0 and abs(f[1] - 0.5) <= 0.02
    picks = [greedy_select(_policy(3), space, rng).top for _ in range(9_000)]
    assert np.allclose(_freq(picks, space.actions), 1 / 3, atol=0.02)
    two = ActionSpace.discrete(["a0", "a1"])
    assert all(greedy_select(_policy(2, sums=[1, 0], counts=[1, 1]), two, rng).top == "a0" for _ in range(50))


def _trace(name, eps, seed, steps=300):
    learner = make_learner(name, ARMS4, LearnerConfig(epsilon0=eps), seed)
    rewards = make_rng([seed, 5])
    out = []
    for _ in range(steps):
        a = learner.predict(1).top
        out.append(a)
        learner.observe(Step(action=a, reward=float(rewards.random() < 0.5)))
    return out


@pytest.mark.parametrize("seed", range(5))
def test_epsilon_endpoints_reproduce_greedy_and_random(seed):
    assert _trace("epsilon_greedy", 0.0, seed) == _trace("greedy", 0.0, seed)
    assert _trace("epsilon_greedy", 1.0, seed) == _trace("random", 0.0, seed)


def test_epsilon_greedy_best_arm_frequency():
    pol = _policy(4, sums=[0.9, 0.1, 0.1, 0.1], counts=[1, 1, 1, 1], epsilon_now=0.1)
    rng = make_rng(3)
    picks = [epsilon_greedy_select(pol, ARMS4, LearnerConfig(), rng).top for _ in range(10_000)]
    assert abs(picks.count("a0") / 10_000 - 0.925) <= 0.01


def test_decaying_epsilon_schedule():
    cfg = LearnerConfig(epsilon0=0.5, decay=0.9, epsilon_min=0.1)
    learner = make_learner("epsilon_greedy_decay", ARMS4, cfg)
    for t in range(1, 30):
        learner.observe(Step(action="a0", reward=0.0))
        assert math.isclose(learner.state.epsilon_now, max(0.1, 0.5 * 0.9 ** t))


@pytest.mark.parametrize("current,previous,expected", [
    (0.8, 0.3, 1 / (1 + math.exp(-2.0))),
    (0.3, 0.8, 1 / (1 + math.exp(2.0))),
    (0.4, 0.4, 0.5),
])
def test_adaptive_epsilon_update_examples(current, previous, expected):
    pol = _policy(2, prev_window_mean=previous, window_rewards=[current] * 4)
    adaptive_epsilon_update(pol, LearnerConfig(adapt_f=4.0))
    assert math.isclose(pol.epsilon_now, expected, rel_tol=1e-12)
    assert pol.prev_window_mean == current and pol.window_rewards == []


def test_adaptive_learner_adapts_every_l_observations():
    learner = make_learner("adaptive_epsilon_greedy", ARMS4, LearnerConfig(epsilon0=0.3, adapt_l=3))
    for _ in range(2):
        learner.observe(Step(action="a0", reward=1.0))
    assert learner.state.epsilon_now == 0.3
    learner.observe(Step(action="a0", reward=1.0))
    assert math.isclose(learner.state.epsilon_now, 1 / (1 + math.exp(-1.0)))


# --- Bush-Mosteller and Roth-Erev ---------------------------------------------------

def test_bush_mosteller_examples():
    pol = _policy(2, probs=np.array([0.5, 0.5]))
    bush_mosteller_update(pol, 0, 0.2, LearnerConfig(alpha=0.1))
    assert np.allclose(pol.probs, [0.55, 0.45], atol=1e-15)
    pol = _policy(2, probs=np.array([0.3, 0.7]))
    bush_mosteller_update(pol, 1, 1.0, LearnerConfig(alpha=0.0, beta=0.0))
    assert np.allclose(pol.probs, [0.3, 0.7])
    pol = _policy(2, probs=np.array([0.5, 0.5]))
    bush_mosteller_update(pol, 0, -1.0, LearnerConfig(beta=0.2))
    assert np.allclose(pol.probs, [0.4, 0.6], atol=1e-15)


@given(st.integers(2, 6), st.lists(st.tuples(st.integers(0, 5), st.floats(-3, 3), st.floats(0, 1)),
                                    max_size=60))
def test_bush_mosteller_keeps_a_distribution(n, updates):
    pol = _policy(n, probs=np.full(n, 1.0 / n))
    for a, r, rate in updates:
        bush_mosteller_update(pol, a % n, r, LearnerConfig(alpha=rate, beta=rate))
        assert np.all(pol.probs >= -1e-15)
        assert abs(pol.probs.sum() - 1.0) <= 1e-12


def test_roth_erev_examples():
    pol = _policy(2, propensity=np.array([1.0, 1.0]))
    roth_erev_update(pol, 0, 1.0, LearnerConfig(sigma=0.1))
    assert np.allclose(pol.propensity, [1.9, 1.0])
    assert math.isclose(pol.probs[0], 1.9 / 2.9)
    pol = _policy(3, propensity=np.array([2.0, 1.0, 1.0]))
    roth_erev_update(pol, 1, 0.5, LearnerConfig(sigma=0.5))
    assert np.allclose(pol.propensity, [2.0, 1.0, 1.0])
    pol = _policy(2, propensity=np.array([1.0, 3.0]))
    roth_erev_update(pol, 1, 0.0, LearnerConfig(sigma=0.0))
    assert np.allclose(pol.propensity, [1.0, 3.0])


def test_roth_erev_clamps_at_floor():
    pol = _policy(2, propensity=np.array([1.0, 1.0]))
    roth_erev_update(pol, 0, -5.0, LearnerConfig(sigma=0.0))
    assert pol.propensity[0] > 0 and abs(pol.probs.sum() - 1.0) < 1e-12


# --- value learners ------------------------------------------------------------------

def test_qlearning_examples():
    pol = _policy(2)
    qlearning_update(pol, "s", 0, 1.0, "t", LearnerConfig(alpha=0.5, gamma_discount=0.9))
    assert pol.q_table["s"][0] == 0.5
    qlearning_update(pol, "s", 0, 5.0, "t", LearnerConfig(alpha=0.0))
    assert pol.q_table["s"][0] == 0.5
    pol = _policy(2)
    pol.q_table["s"] = np.array([0.5, 0.0])
    pol.q_table["t"] = np.array([0.5, 0.2])
    qlearning_update(pol, "s", 0, 0.0, "t", LearnerConfig(alpha=0.5, gamma_discount=0.9))
    assert math.isclose(pol.q_table["s"][0], 0.475)


def test_qlearning_bootstraps_over_allowed_actions_only():
    pol = _policy(2)
    pol.q_table["t"] = np.array([0.0, 10.0])
    qlearning_update(pol, "s", 0, 0.0, "t", LearnerConfig(alpha=1.0, gamma_discount=0.5), allowed_next=[0])
    assert pol.q_table["s"][0] == 0.0


def test_sarsa_examples():
    pol = _policy(2)
    sarsa_update(pol, "s", 0, 1.0, "t", 1, LearnerConfig(alpha=0.5))
    assert pol.q_table["s"][0] == 0.5
    sarsa_update(pol, "s", 0, 9.0, "t", 1, LearnerConfig(alpha=0.0))
    assert pol.q_table["s"][0] == 0.5
    pol = _policy(2)
    pol.q_table["t"] = np.array([0.0, 1.0])
    sarsa_update(pol, "s", 0, 0.0, "t", 1, LearnerConfig(alpha=1.0, gamma_discount=0.9))
    assert math.isclose(pol.q_table["s"][0], 0.9)


def test_sarsa_learner_waits_for_next_action():
    space = ActionSpace.discrete(["x", "y"])
    learner = make_learner("sarsa", space, LearnerConfig(alpha=1.0, gamma_discount=0.5))
    learner.state.q_table["t"] = np.array([0.0, 4.0])
    learner.observe(Step(action="x", reward=1.0, state="s", next_state="t"))
    assert "s" not in learner.state.q_table or learner.state.q_table["s"][0] == 0.0
    learner.observe(Step(action="y", reward=0.0, state="t", next_state=None))
    assert learner.state.q_table["s"][0] == 1.0 + 0.5 * 4.0


def test_reinforce_examples():
    pol = _policy(2)
    reinforce_update(pol, [("s", 0, 1.0)], LearnerConfig(alpha=0.1, gamma_discount=1.0))
    assert np.allclose(pol.logits["s"], [0.05, -0.05])
    pol = _policy(2)
    reinforce_update(pol, [("s", 0, 0.0), ("t", 1, 0.0)], LearnerConfig())
    assert all(np.all(v == 0) for v in pol.logits.values())
    pol = _policy(2)
    reinforce_update(pol, [], LearnerConfig())
    assert pol.logits == {}


def test_reinforce_discounted_returns():
    g, alpha = 0.5, 0.2
    pol = _policy(2)
    reinforce_update(pol, [("a", 0, 1.0), ("b", 1, 2.0)], LearnerConfig(alpha=alpha, gamma_discount=g))
    # G_0 = 1 + 0.5 * 2 = 2 and G_1 = 2; step t is weighted by alpha * g**t * G_t
    assert np.allclose(pol.logits["a"], alpha * 2.0 * np.array([0.5, -0.5]))
    assert np.allclose(pol.logits["b"], alpha * g * 2.0 * np.array([-0.5, 0.5]))


def test_reinforce_learner_updates_at_episode_end_only():
    space = ActionSpace.discrete(["x", "y"])
    learner = make_learner("reinforce", space, LearnerConfig(alpha=0.1))
    learner.observe(Step(action="x", reward=1.0, state="s", next_state="s"))
    assert "s" not in learner.state.logits
    learner.end_episode()
    assert learner.state.logits["s"][0] > 0


def test_actor_critic_examples():
    pol = _policy(2)
    actor_critic_update(pol, "s", 0, 1.0, None, True, LearnerConfig(alpha=0.1, alpha_v=0.5))
    assert pol.v_table["s"] == 0.5
    assert np.allclose(pol.logits["s"], [0.05, -0.05])
    pol = _policy(2)
    pol.v_table.update({"s": 0.9, "t": 1.0})
    actor_critic_update(pol, "s", 1, 0.0, "t", False, LearnerConfig(gamma_discount=0.9))
    assert pol.v_table["s"] == 0.9 and "s" not in pol.logits


@settings(max_examples=40)
@given(st.lists(st.floats(-4, 4), min_size=2, max_size=5), st.integers(0, 4), st.floats(0.05, 1.0))
def test_policy_gradient_step_matches_finite_differences(z, a, alpha):
    a = a % len(z)
    pol = _policy(len(z))
    pol.logits["s"] = np.array(z, dtype=float)
    reinforce_update(pol, [("s", a, 1.0)], LearnerConfig(alpha=alpha))
    assert np.allclose((pol.logits["s"] - np.array(z)) / alpha, fd_grad_log_policy(z, a), atol=1e-6)


def test_policy_gradient_respects_allowed_actions():
    space = mdp_space()
    learner = make_learner("actor_critic", space, LearnerConfig(alpha=0.5))
    learner.observe(Step(action="switch", reward=1.0, state="Foraging", next_state="Navigation"))
    z = learner.state.logits["Foraging"]
    blocked = [space.index("switch_forage"), space.index("switch_sense")]
    assert np.all(z[blocked] == 0)
    assert z[space.index("switch")] > 0 > z[space.index("maintain")]


# --- bandits ---------------------------------------------------------------------------

def test_mortal_budgeted_arm_dies_after_its_lifetime():
    learner = make_learner("mortal_budgeted", ARMS4, LearnerConfig(mortal_lifetime=5))
    learner.state.lifetimes[:] = 3
    for i in range(3):
        assert learner.state.deaths[0] == 0
        learner.observe(Step(action="a0", reward=1.0))
    assert learner.state.deaths[0] == 1
    assert learner.state.counts[0] == 0


def test_mortal_timed_certain_death():
    learner = make_learner("mortal_timed", ARMS4, LearnerConfig(mortal_p=1.0))
    learner.observe(Step(action="a1", reward=1.0))
    assert list(learner.state.deaths) == [1, 1, 1, 1]
    assert learner.state.counts.sum() == 0


def test_mortal_keep_rule():
    cfg = LearnerConfig(mortal_n=2, mortal_keep=0.5)
    pol = _policy(4, sums=[2.0, 0.0, 0.0, 0.0], counts=[2, 0, 0, 0])
    assert all(mortal_bandit_step(pol, ARMS4, cfg, make_rng(i)).top == "a0" for i in range(20))
    pol = _policy(4, sums=[0.0, 0.0, 0.0, 0.0], counts=[2, 0, 0, 0])
    assert all(mortal_bandit_step(pol, ARMS4, cfg, make_rng(i)).top != "a0" for i in range(20))


def test_contextual_examples():
    space = ActionSpace.discrete(["x", "y"])
    cfg = LearnerConfig(epsilon0=0.0)
    tables = {"pan": (np.array([90.0, 10.0]), np.array([100.0, 100.0]))}
    glob = _policy(2, sums=[0.1, 0.9], counts=[1, 1])
    assert contextual_select(glob, "pan", space, cfg, make_rng(0), tables=tables).top == "x"
    assert contextual_select(glob, "zoom", space, cfg, make_rng(0), tables=tables).top == "y"
    rng = make_rng(1)
    picks = [contextual_select(glob, "pan", space, LearnerConfig(epsilon0=1.0), rng, tables=tables).top
             for _ in range(10_000)]
    assert abs(picks.count("x") / 10_000 - 0.5) <= 0.02


def _tv(counts, p):
    return 0.5 * np.abs(counts / counts.sum() - p).sum()


def _subset_frequencies(pol, space, cfg, catalog, draws, seed):
    index = {frozenset(space.item_universe[i] for i in sub): j for j, sub in enumerate(catalog.subsets)}
    counts = np.zeros(len(catalog))
    rng = make_rng(seed)
    for _ in range(draws):
        counts[index[frozenset(combinatorial_select(pol, space, cfg, rng, catalog).ids)]] += 1
    return counts


def test_combinatorial_select_degenerate_mixes():
    space = ActionSpace.subset(list("abcde"), 3)
    catalog = SubsetCatalog(5, 3)
    pol = _policy(5, log_weights=np.random.default_rng(0).normal(size=len(catalog)))
    counts = _subset_frequencies(pol, space, LearnerConfig(gamma_mix=1.0), catalog, 100_000, 1)
    assert _tv(counts, np.full(len(catalog), 0.1)) <= 0.01
    pol = _policy(5, log_weights=np.zeros(len(catalog)))
    counts = _subset_frequencies(pol, space, LearnerConfig(gamma_mix=0.0), catalog, 20_000, 2)
    assert _tv(counts, np.full(len(catalog), 0.1)) <= 0.02


def test_subset_catalog_needs_enough_items():
    with pytest.raises(UsageError):
        SubsetCatalog(2, 3)


def test_combinatorial_update_examples():
    cfg = LearnerConfig(eta=0.1, gamma_mix=0.05)
    pol = _policy(6, log_weights=np.zeros(20))
    combinatorial_update(pol, 4, 0.0, cfg)
    assert np.all(pol.log_weights == 0)
    combinatorial_update(pol, 4, 1.0, cfg)
    w = pol.weights
    assert math.isclose(w[4], math.exp(-0.1 * 20), rel_tol=1e-12)
    assert np.all(np.delete(w, 4) == 1.0)
    pol = _policy(6, log_weights=np.zeros(20))
    combinatorial_update(pol, 1, 0.0, cfg)
    combinatorial_update(pol, 2, 0.0, cfg)
    assert np.allclose(combinatorial_distribution(pol, cfg), 1 / 20)


def test_subset_catalog_consistency():
    cat = SubsetCatalog(5, 3)
    assert len(cat) == 10
    inside = cat.consistent_with([0, 1, 2, 3])
    assert all(set(cat.subsets[j]) <= {0, 1, 2, 3} for j in inside) and len(inside) == 4
    covering = cat.consistent_with([4])
    assert all(4 in cat.subsets[j] for j in covering) and len(covering) == 6


# --- contract shared by the catalog -----------------------------------------------------

def _space_for(name):
    if name in ("qlearning", "sarsa", "reinforce", "actor_critic"):
        return mdp_space(), 1
    if name in ("bush_mosteller", "roth_erev", "combinatorial"):
        return ActionSpace.subset(list("abcdef"), 3), 3
    return ARMS4, 2


def _random_step(space, rng):
    if space.kind == "subset":
        items = rng.choice(space.item_universe, size=int(rng.integers(0, 5)), replace=False)
        return Step(items=frozenset(items), reward=float(rng.integers(0, 4)), context="c")
    if space.allowed is not None:
        state = str(rng.choice(list(space.allowed)))
        acts = space.allowed[state]
        return Step(action=acts[int(rng.integers(len(acts)))], reward=float(rng.random()), state=state,
                    next_state=str(rng.choice(list(space.allowed))))
    return Step(action=space.actions[int(rng.integers(space.n))], reward=float(rng.random()),
                context=str(rng.choice(["pan", "zoom"])))


@pytest.mark.parametrize("name", sorted(LEARNERS))
def test_predict_is_side_effect_free_and_valid(name):
    space, k = _space_for(name)
    learner = make_learner(name, space, None, seed=4)
    rng = make_rng(9)
    for _ in range(40):
        step = _random_step(space, rng)
        before = pickle.dumps(learner.__dict__)
        first = learner.predict(k, state=step.state, context=step.context)
        again = learner.predict(k, state=step.state, context=step.context)
        assert pickle.dumps(learner.__dict__) == before
        assert first == again
        assert len(set(first.ids)) == first.k == k
        allowed = {space.actions[i] for i in space.allowed_indices(step.state)}
        assert set(first.ids) <= allowed
        learner.observe(step)
