"""Hybrid book/author recommender with an offline MRR evaluation harness."""

from hybrid_bookrec.corpus import (
    Catalog,
    RatingEvent,
    SplitCorpus,
    UserProfile,
    build_catalog,
    build_profile,
    load_ratings,
    synth_generate,
    temporal_split,
)
from hybrid_bookrec.hybrid import FusionSpec, HybridEngine, RecommendationList, recommend
from hybrid_bookrec.predictor import AggregationSpec, RankVector
from hybrid_bookrec.evaluation import EvalConfig, EvalReport, evaluate, mrr

__version__ = "0.1.0"

__all__ = [
    "AggregationSpec",
    "Catalog",
    "EvalConfig",
    "EvalReport",
    "FusionSpec",
    "HybridEngine",
    "RankVector",
    "RatingEvent",
    "RecommendationList",
    "SplitCorpus",
    "UserProfile",
    "build_catalog",
    "build_profile",
    "evaluate",
    "load_ratings",
    "mrr",
    "recommend",
    "synth_generate",
    "temporal_split",
]
