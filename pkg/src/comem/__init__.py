"""Co-membership probabilities, community detection and tracking on networks."""

__version__ = "0.1.0"

from .graph import (
    BlockParams,
    CommunityAssignment,
    Graph,
    Partition,
    PlantedParams,
    enumerate_partitions,
    karate_graph,
    load_edge_list,
    nmi,
    sample_planted,
    save_edge_list,
)

__all__ = [
    "BlockParams",
    "CommunityAssignment",
    "Graph",
    "Partition",
    "PlantedParams",
    "enumerate_partitions",
    "karate_graph",
    "load_edge_list",
    "nmi",
    "sample_planted",
    "save_edge_list",
    "__version__",
]
