"""Exact inference for the infinite dyadic-tree mixture density model."""

from .core import (
    DEFAULT_CONFIG,
    DimensionDistribution,
    DuplicateDataError,
    ModelConfig,
    NodeSummary,
    QueryPosition,
    SplitCounts,
    combine,
    evaluate,
    leaf_summary,
    log_weight,
    prior_dim_coeffs,
)
from .tree import (
    CellReport,
    FittedTree,
    build,
    cdf,
    height_at,
    insert,
    log_evidence_with,
    map_skeleton,
    node_stats,
    predictive_density,
    remove,
    sample,
)

__all__ = [
    "DEFAULT_CONFIG", "CellReport", "DimensionDistribution", "DuplicateDataError", "FittedTree",
    "ModelConfig", "NodeSummary", "QueryPosition", "SplitCounts", "build", "cdf", "combine",
    "evaluate", "height_at", "insert", "leaf_summary", "log_evidence_with", "log_weight",
    "map_skeleton", "node_stats", "predictive_density", "prior_dim_coeffs", "remove", "sample",
]
__version__ = "0.1.0"
