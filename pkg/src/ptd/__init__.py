"""Distributed probabilistic top-k dominating queries over uncertain objects."""

from .core import (
    Dataset, DominanceClass, Instance, InvalidInput, QueryPoint, Rect, UncertainObject,
    classify_rect, dyn_attrs, dynamic_dominates,
)
from .oracle import ScoredObject, all_scores, object_score_exact, ptd_exact

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DominanceClass", "Instance", "InvalidInput", "QueryPoint", "Rect",
    "UncertainObject", "classify_rect", "dyn_attrs", "dynamic_dominates",
    "ScoredObject", "all_scores", "object_score_exact", "ptd_exact",
]
