"""Stochastic bounded-confidence opinion dynamics: linear stability
predictions, particle simulation, cluster analysis and a reduced
cluster-merge model."""

from .influence import InfluenceShape, ScaledInfluence, builtin_shapes, get_shape
from .sde_sim import SimConfig, Trajectory, run
from .stability import DomainParams, FrequencyGrid, StabilityReport, predict_clusters

__version__ = "0.1.0"

__all__ = [
    "InfluenceShape",
    "ScaledInfluence",
    "builtin_shapes",
    "get_shape",
    "SimConfig",
    "Trajectory",
    "run",
    "DomainParams",
    "FrequencyGrid",
    "StabilityReport",
    "predict_clusters",
]
