"""Synthetic corpora, loaders, splits, and reference baselines."""

from .baselines import matrix_factorization_baseline, tsp_knn_baseline
from .bundle import (
    DatasetBundle,
    Split,
    graph_rng,
    make_splits,
    ratio_split,
    stratified_kfold,
)
from .csl import CslConfig, circulant_pairs, gen_csl
from .io import (
    LinkBundle,
    edge_splits_by_time,
    load_edge_list,
    load_graphs,
    manifest_dict,
    save_bundle,
)
from .sbm import SbmClusterConfig, SbmPatternConfig, gen_cluster, gen_pattern, sbm_edges
from .tsp import (
    TspConfig,
    gen_tsp,
    held_karp,
    nearest_neighbor_tour,
    tour_length,
    two_opt,
)

# generator name -> (config class, generating function)
GENERATORS = {
    "pattern": (SbmPatternConfig, gen_pattern),
    "cluster": (SbmClusterConfig, gen_cluster),
    "csl": (CslConfig, gen_csl),
    "tsp": (TspConfig, gen_tsp),
}

__all__ = [
    "GENERATORS",
    "CslConfig",
    "DatasetBundle",
    "LinkBundle",
    "SbmClusterConfig",
    "SbmPatternConfig",
    "Split",
    "TspConfig",
    "circulant_pairs",
    "edge_splits_by_time",
    "gen_cluster",
    "gen_csl",
    "gen_pattern",
    "gen_tsp",
    "graph_rng",
    "held_karp",
    "load_edge_list",
    "load_graphs",
    "manifest_dict",
    "make_splits",
    "matrix_factorization_baseline",
    "nearest_neighbor_tour",
    "ratio_split",
    "save_bundle",
    "sbm_edges",
    "stratified_kfold",
    "tour_length",
    "tsp_knn_baseline",
    "two_opt",
]
