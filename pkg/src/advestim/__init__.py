"""Adversarial estimation for simulation-based structural models.

A generator (the structural model) and a discriminator (oracle, logistic,
or neural-network classifier) play a minimax game over the cross-entropy
classification loss; the estimator is the generator parameter at the saddle
point.  The package also ships MLE, simulated-method-of-moments, and
indirect-inference baselines, bootstrap standard errors, loss-surface and
curvature diagnostics, and a Monte Carlo harness with a registry of
reference experiments.
"""

__version__ = "0.1.0"

from .randkit import RngState, LatentDraws
from .models import Dataset, GeneratorSpec, ParamVector, param_template
from .discriminators import DiscriminatorSpec
from .objective import TrainConfig, cross_entropy_loss, make_context, profiled_loss
from .estimators import (
    EstimateReport,
    OptimizerConfig,
    adversarial_estimate,
    ii_estimate,
    mle_estimate,
    smm_estimate,
)

__all__ = [
    "__version__",
    "RngState",
    "LatentDraws",
    "Dataset",
    "GeneratorSpec",
    "ParamVector",
    "param_template",
    "DiscriminatorSpec",
    "TrainConfig",
    "cross_entropy_loss",
    "make_context",
    "profiled_loss",
    "EstimateReport",
    "OptimizerConfig",
    "adversarial_estimate",
    "mle_estimate",
    "smm_estimate",
    "ii_estimate",
]
