"""Unbalanced-initialization GD and NAG for rectangular low-rank factorization and linear networks."""

from ._kernels import BACKEND
from .dynamics import TheoryBound, contraction_factor, subspace_leakage, theory_bound_curve
from .init import ConfigError, FactorizationProblem, InitConfig, initialize, make_mf_problem
from .lnn import LinearNetworkProblem, check_thm3_premise, make_lnn_problem
from .optim import HyperParams, StopRule, derive_hyperparams, run

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigError", "FactorizationProblem", "HyperParams", "InitConfig", "LinearNetworkProblem",
    "StopRule", "TheoryBound", "check_thm3_premise", "contraction_factor", "derive_hyperparams",
    "initialize", "make_lnn_problem", "make_mf_problem", "run", "subspace_leakage", "theory_bound_curve",
]
