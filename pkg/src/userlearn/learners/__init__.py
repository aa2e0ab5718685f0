"""Online learning algorithms used as models of analysts' choices."""

from userlearn.core import ActionSpace, UsageError
from userlearn.learners.bandits import (
    CombinatorialBanditLearner,
    ContextualBanditLearner,
    MortalBanditLearner,
    SubsetCatalog,
    TimedMortalBanditLearner,
    combinatorial_distribution,
    combinatorial_select,
    combinatorial_update,
    contextual_select,
    mortal_bandit_step,
)
from userlearn.learners.base import Learner, LearnerConfig, PolicyState
from userlearn.learners.games import (
    BushMostellerLearner,
    RothErevLearner,
    bush_mosteller_update,
    roth_erev_update,
)
from userlearn.learners.heuristics import (
    AdaptiveEpsilonGreedyLearner,
    DecayingEpsilonGreedyLearner,
    EpsilonGreedyLearner,
    GreedyLearner,
    RandomLearner,
    WSLSLearner,
    adaptive_epsilon_update,
    epsilon_greedy_select,
    greedy_select,
    random_select,
    wsls_step,
)
from userlearn.learners.rl import (
    ActorCriticLearner,
    QLearningLearner,
    ReinforceLearner,
    SarsaLearner,
    actor_critic_update,
    qlearning_update,
    reinforce_update,
    sarsa_update,
)

LEARNERS: dict[str, type[Learner]] = {
    cls.name: cls
    for cls in (
        RandomLearner,
        WSLSLearner,
        GreedyLearner,
        EpsilonGreedyLearner,
        DecayingEpsilonGreedyLearner,
        AdaptiveEpsilonGreedyLearner,
        BushMostellerLearner,
        RothErevLearner,
        QLearningLearner,
        SarsaLearner,
        ReinforceLearner,
        ActorCriticLearner,
        MortalBanditLearner,
        TimedMortalBanditLearner,
        ContextualBanditLearner,
        CombinatorialBanditLearner,
    )
}

_RATES = [0.01, 0.1, 0.5]
_GAMMAS = [0.5, 0.9, 0.99]
_EPS = [0.001, 0.01, 0.1, 0.3]

DEFAULT_GRIDS: dict[str, dict[str, list]] = {
    "random": {},
    "wsls": {},
    "greedy": {},
    "epsilon_greedy": {"epsilon0": _EPS},
    "epsilon_greedy_decay": {"epsilon0": _EPS, "decay": [0.99, 0.999]},
    "adaptive_epsilon_greedy": {"epsilon0": _EPS, "adapt_l": [5, 10], "adapt_f": [1.0, 4.0]},
    "bush_mosteller": {"alpha": _RATES, "beta": _RATES},
    "roth_erev": {"sigma": [0.0, 0.1, 0.5]},
    "qlearning": {"alpha": _RATES, "gamma_discount": _GAMMAS, "epsilon0": _EPS},
    "sarsa": {"alpha": _RATES, "gamma_discount": _GAMMAS, "epsilon0": _EPS},
    "reinforce": {"alpha": _RATES, "gamma_discount": _GAMMAS},
    "actor_critic": {"alpha": _RATES, "gamma_discount": _GAMMAS, "alpha_v": _RATES},
    "mortal_budgeted": {"mortal_lifetime": [5, 20], "mortal_n": [1, 3]},
    "mortal_timed": {"mortal_p": [0.05, 0.2], "mortal_n": [1, 3]},
    "contextual": {"epsilon0": _EPS},
    "combinatorial": {"eta": [0.01, 0.1], "gamma_mix": [0.05, 0.2]},
}


def make_learner(name: str, space: ActionSpace, config: LearnerConfig | None = None,
                 seed: int = 0) -> Learner:
    try:
        cls = LEARNERS[name]
    except KeyError:
        raise UsageError(f"unknown algorithm {name!r}; known: {sorted(LEARNERS)}") from None
    return cls(space, config, seed)


__all__ = [name for name in dir() if not name.startswith("_")]
