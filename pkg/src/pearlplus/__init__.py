"""Meta-RL with prior-context regularization (PEARL+) on a from-scratch autodiff core."""

from .agent import AgentConfig, AgentNets
from .meta import AdaptationReport, MetaLearner, MetaTrainConfig, alpha_sweep, meta_test

__version__ = "0.1.0"

__all__ = [
    "AdaptationReport", "AgentConfig", "AgentNets", "MetaLearner", "MetaTrainConfig",
    "alpha_sweep", "meta_test",
]
