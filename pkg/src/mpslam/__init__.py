"""Multipath-aided simultaneous localization and mapping.

A sum-product filter over an agent state and a map of potential anchor
images, using sigma-point Gaussian message approximations and loopy belief
propagation for measurement association, plus a particle-filter baseline, a
scenario simulator, evaluation metrics, and an experiment CLI.
"""

__version__ = "0.1.0"

from .gaussmath import GaussianBelief, UTParams
from .models import AgentState, MeasurementNoise, PBOHypothesis

__all__ = [
    "__version__",
    "GaussianBelief",
    "UTParams",
    "AgentState",
    "MeasurementNoise",
    "PBOHypothesis",
]
