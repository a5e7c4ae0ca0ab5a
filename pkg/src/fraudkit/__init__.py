"""Leakage-safe temporal graph features and fraud classification."""

from fraudkit.errors import ContractError, DataError, FraudkitError
from fraudkit.temporal_graph import SnapshotView, TemporalGraph, UndirectedView
from fraudkit.graph_features import DescriptorSpec, FeatureMatrix

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "DataError",
    "DescriptorSpec",
    "FeatureMatrix",
    "FraudkitError",
    "SnapshotView",
    "TemporalGraph",
    "UndirectedView",
    "__version__",
]
