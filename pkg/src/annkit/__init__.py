"""annkit: vector similarity search toolkit.

Index families (flat, IVF, HNSW graph, binary), a vector codec hierarchy
(k-means, scalar, product, residual/local-search additive), metric
equivalence transforms, Pareto parameter tuning, filtered search, and a
benchmark CLI.
"""

from ._kernels import COMPILED
from .core import (Index, Metric, MetricKind, METRIC_IP, METRIC_L2, RangeResult,
                   SearchResult, knn_recall, pairwise_distance, pairwise_distances,
                   range_search_map, refine_search, reservoir_select, topk_select)
from .flat import FlatIndex

__version__ = "0.1.0"

__all__ = [
    "COMPILED",
    "FlatIndex",
    "Index",
    "Metric",
    "MetricKind",
    "METRIC_IP",
    "METRIC_L2",
    "RangeResult",
    "SearchResult",
    "knn_recall",
    "pairwise_distance",
    "pairwise_distances",
    "range_search_map",
    "refine_search",
    "reservoir_select",
    "topk_select",
]
