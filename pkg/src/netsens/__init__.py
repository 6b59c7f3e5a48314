"""Sensitivity of network communicability to edge and node modifications."""

from .graph import EdgePair, Graph, GraphFormatError, florentine_families, load_graph, random_geometric_graph
from .krylov import LowRankFrechet, expm_action, krylov_frechet
from .maxelem import MaskedOperator, TopPConfig, power_max, top_p
from .sensitivity import (
    Measure,
    SensitivityReport,
    all_edge_sensitivities,
    edge_sensitivity,
    estrada_index,
    node_removal_sensitivity,
    subgraph_centrality,
    top_p_edges,
    total_communicability,
)

__version__ = "0.1.0"

__all__ = [
    "EdgePair",
    "Graph",
    "GraphFormatError",
    "LowRankFrechet",
    "MaskedOperator",
    "Measure",
    "SensitivityReport",
    "TopPConfig",
    "all_edge_sensitivities",
    "edge_sensitivity",
    "estrada_index",
    "expm_action",
    "florentine_families",
    "krylov_frechet",
    "load_graph",
    "node_removal_sensitivity",
    "power_max",
    "random_geometric_graph",
    "subgraph_centrality",
    "top_p",
    "top_p_edges",
    "total_communicability",
]
