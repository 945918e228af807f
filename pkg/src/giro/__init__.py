"""Bootstrap exploration with pseudo rewards for multi-armed and contextual bandits."""

from .analysis import (BoundReport, W_bound_thm3, W_exact, giro_constants, regret_bound_thm2,
                       theorem1_terms, verify_bounds)
from .config import ExperimentConfig, PolicySpec
from .contextual import ContextualGiro, LinTS, LinUCB, fit_reward_model, load_classification_env
from .core import BanditInstance, RunLog, split_seed
from .harness import aggregate, lemma1_experiment, run_experiment
from .policies import (KLUCB, UCB1, ArmRecord, EpsilonGreedy, Giro, NaiveBootstrap,
                       ThompsonSampling, giro_value, make_policy)

__version__ = "0.1.0"

__all__ = [
    "ArmRecord", "BanditInstance", "BoundReport", "ContextualGiro", "EpsilonGreedy",
    "ExperimentConfig", "Giro", "KLUCB", "LinTS", "LinUCB", "NaiveBootstrap", "PolicySpec",
    "RunLog", "ThompsonSampling", "UCB1", "W_bound_thm3", "W_exact", "aggregate",
    "fit_reward_model", "giro_constants", "giro_value", "lemma1_experiment", "load_classification_env",
    "make_policy", "regret_bound_thm2", "run_experiment", "split_seed", "theorem1_terms",
    "verify_bounds",
]
