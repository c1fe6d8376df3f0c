"""Leader/follower policy search for two-agent partially observed Markov games.

The leader commits to a finite-memory policy, the follower best-responds
through a belief over the leader's information window, and a genetic search
over leader policies returns the non-dominated set for a human to choose from.
"""
__version__ = "0.1.0"

from .evaluator import (EquilibriumReport, FitnessTuple, GTable, equilibrium_check,
                        evaluate_pair, fitness, leader_value, solve_g)
from .finite_memory import approximate, approximate_policy
from .follower import (GammaSet, GammaVector, NotConverged, backup, initial_value, purge,
                       value_at, value_iteration)
from .history import (Belief, Window, WindowSpace, belief_update, enumerate_windows,
                       initial_follower_belief)
from .model import (FactoredObservation, ModelParseError, ModelValidationError, PomgModel,
                    load_model, random_model, save_model, validate_factorization)
from .moga import MogaParams, dominates, fast_nondominated_sort, crowding_distance, run_moga
from .policy import FiniteMemoryPolicy, deterministic_policy, load_policy, save_policy
from .scenario import (ScenarioParams, build_model, decision_support_table,
                       enumerate_deterministic)
from .voi import Garbling, compare_information, garble, random_garbling

__all__ = [
    "__version__", "PomgModel", "FactoredObservation", "ModelParseError", "ModelValidationError",
    "load_model", "save_model", "random_model", "validate_factorization",
    "Window", "WindowSpace", "Belief", "enumerate_windows", "belief_update",
    "initial_follower_belief", "FiniteMemoryPolicy", "deterministic_policy", "load_policy",
    "save_policy", "GammaSet", "GammaVector", "NotConverged", "backup", "purge", "value_at",
    "value_iteration", "initial_value", "approximate", "approximate_policy", "GTable",
    "FitnessTuple", "EquilibriumReport", "solve_g", "leader_value", "evaluate_pair", "fitness",
    "equilibrium_check", "MogaParams", "dominates", "fast_nondominated_sort",
    "crowding_distance", "run_moga", "ScenarioParams", "build_model", "enumerate_deterministic",
    "decision_support_table", "Garbling", "garble", "random_garbling", "compare_information",
]
