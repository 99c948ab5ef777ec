"""Dirichlet-process mixtures of categorical DAG models."""

__version__ = "0.1.0"

import os as _os

TOY_DATA = _os.path.join(_os.path.dirname(__file__), "data", "toy.csv")

from .catmodel import BdeuParams, Dataset, read_dataset
from .causal import CausalQuery, bma_battery, bma_effects, causal_effect
from .dpmix import McmcConfig, Trace, run_mcmc
from .errors import ContractViolation, InvalidInputError, InvariantError, TooLargeError
from .graph import Dag, DagPriorParams, StructuralConstraints, read_constraints, shd
from .summaries import (point_clustering_minvi, point_clustering_threshold, point_dag, ppi,
                        ppi_all, similarity, variation_of_information)

__all__ = [
    "BdeuParams", "CausalQuery", "ContractViolation", "Dag", "DagPriorParams", "Dataset",
    "InvalidInputError", "InvariantError", "McmcConfig", "StructuralConstraints",
    "TOY_DATA", "TooLargeError", "Trace", "bma_battery", "bma_effects", "causal_effect",
    "point_clustering_minvi", "point_clustering_threshold", "point_dag", "ppi", "ppi_all",
    "read_constraints", "read_dataset", "run_mcmc", "shd", "similarity",
    "variation_of_information",
]
