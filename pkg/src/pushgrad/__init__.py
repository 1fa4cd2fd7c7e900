"""Decentralized hyper-gradient estimation over time-varying directed graphs."""

from .consensus import (AveragingOperator, ConsensusDivergenceError, DoublyStochastic,
                        ExactAverage, PushSum, push_sum_average)
from .estimators import DecentralizedLogisticRegression, HyperGradientPush, InfluenceEstimator
from .hgp import HgpConfig, HgpResult, hgp_run
from .innersolve import FederatedProblem, newton_consensus_solve, sgp_train
from .netgraph import (EdgeProbabilityMatrix, GraphSchedule, check_b_strong_connectivity,
                       load_schedule, sample_schedule, save_schedule)
from .objective import InstanceMaskCost, QuadraticCost, RegularizedLogisticCost
from .oracle import finite_difference_hypergradient, fixed_point_reference, ift_hypergradient
from .synthdata import SyntheticConfig, generate_federation

__version__ = "0.1.0"

__all__ = [
    "AveragingOperator", "ConsensusDivergenceError", "DoublyStochastic", "ExactAverage", "PushSum",
    "push_sum_average", "DecentralizedLogisticRegression", "HyperGradientPush",
    "InfluenceEstimator", "HgpConfig", "HgpResult", "hgp_run", "FederatedProblem",
    "newton_consensus_solve", "sgp_train", "EdgeProbabilityMatrix", "GraphSchedule",
    "check_b_strong_connectivity", "load_schedule", "sample_schedule", "save_schedule",
    "InstanceMaskCost", "QuadraticCost", "RegularizedLogisticCost",
    "finite_difference_hypergradient", "fixed_point_reference", "ift_hypergradient",
    "SyntheticConfig", "generate_federation",
]
