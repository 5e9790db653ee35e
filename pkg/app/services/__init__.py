"""Service modules"""
from app.services.degree import DegreeDistribution, mixture, soliton_like
from app.services.receivers import ReceiverModel, success_prob
from app.services.evolution import (
    SystemConfig,
    de_fixed_point,
    de_step,
    offered_loads,
    success_probabilities,
    throughput,
)
from app.services.stability import (
    check_sufficient_stability,
    classify_batch,
    classify_load,
    epsilon_stable,
    irsa_threshold,
    percolation_threshold_1d,
)
from app.services.regions import GridSpec, RegionMap, extract_boundary, map_region, throughput_surface
from app.services.montecarlo import build_instance, peel, run_trials

__all__ = [
    "DegreeDistribution",
    "mixture",
    "soliton_like",
    "ReceiverModel",
    "success_prob",
    "SystemConfig",
    "de_fixed_point",
    "de_step",
    "offered_loads",
    "success_probabilities",
    "throughput",
    "check_sufficient_stability",
    "classify_batch",
    "classify_load",
    "epsilon_stable",
    "irsa_threshold",
    "percolation_threshold_1d",
    "GridSpec",
    "RegionMap",
    "extract_boundary",
    "map_region",
    "throughput_surface",
    "build_instance",
    "peel",
    "run_trials",
]
