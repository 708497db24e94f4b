"""Policy iteration and primal-dual learning for mean-field stochastic LQR."""

from .config import ExperimentConfig, load_bundled, parse_config
from .core import GainPair, InitialStateEnsemble, MfSystem, WeightSpec, validate_weights
from .errors import MfLqrError
from .lyapunov import is_stabilizing, solve_gle_dual, solve_gle_primal
from .model_free import PartialModel, run_pdmf
from .primal_dual import run_pd
from .riccati import optimal_cost, policy_evaluation, run_pi

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "load_bundled",
    "parse_config",
    "GainPair",
    "InitialStateEnsemble",
    "MfSystem",
    "WeightSpec",
    "validate_weights",
    "MfLqrError",
    "is_stabilizing",
    "solve_gle_dual",
    "solve_gle_primal",
    "PartialModel",
    "run_pdmf",
    "run_pd",
    "run_pi",
    "optimal_cost",
    "policy_evaluation",
]
