"""Forgetting, propagation of chaos and couplings of particle filters."""

from .coupling import CoupledFilterPair, cond_max_couple, coupling_time
from .errors import SMCError
from .exact import CountChainDistribution, evolve_counts, exact_forgetting_tv, exact_poc_tv
from .fkmodel import DiscreteFKModel, FeynmanKacModel, binary_model, stability_constants
from .measures import DiscretePMF, hellinger_sq, tv_distance
from .oos import DelayedMeasurementScenario, process_oos
from .smc import ParticleSystem, ReferencePath, run_cpf, run_pf

__version__ = "0.1.0"

__all__ = [
    "CoupledFilterPair", "cond_max_couple", "coupling_time", "SMCError", "CountChainDistribution",
    "evolve_counts", "exact_forgetting_tv", "exact_poc_tv", "DiscreteFKModel", "FeynmanKacModel",
    "binary_model", "stability_constants", "DiscretePMF", "hellinger_sq", "tv_distance",
    "DelayedMeasurementScenario", "process_oos", "ParticleSystem", "ReferencePath", "run_cpf", "run_pf",
]
