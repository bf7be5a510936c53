"""Hybrid job recommendation engine.

Builds a labeled multigraph of jobs from user interaction logs (co-apply and
co-click counts plus per-job totals), augments it with content-similarity
edges from job embeddings, aggregates everything into a directed weighted
recommendation digraph restricted to active jobs, and serves top-k
recommendations for active, passive, and anonymous users. Matrix
factorization and a nearest-applicants collaborative filter are included as
offline baselines.
"""

__version__ = "0.1.0"

from .config import ConfigError, EngineConfig, load_config
from .evaluation import classic_cf, evaluate_systems, synth_corpus
from .graph import JobMultiGraph, build_costats
from .ingest import (
    InteractionEvent,
    JobRecord,
    SignalKind,
    dedupe,
    parse_events,
    parse_jobs,
    window_filter,
)
from .mf import als_train, build_matrix, recommend_mf
from .recommend import (
    Recommendation,
    RecommenderParams,
    UserProfile,
    build_profiles,
    classify_user,
    global_pagerank,
    personalized_pagerank,
    recommend,
)
from .scoring import RecDigraph, ScoreWeights, aggregate, content_edges

__all__ = [
    "ConfigError",
    "EngineConfig",
    "InteractionEvent",
    "JobMultiGraph",
    "JobRecord",
    "RecDigraph",
    "Recommendation",
    "RecommenderParams",
    "ScoreWeights",
    "SignalKind",
    "UserProfile",
    "__version__",
    "aggregate",
    "als_train",
    "build_costats",
    "build_matrix",
    "build_profiles",
    "classic_cf",
    "classify_user",
    "content_edges",
    "dedupe",
    "evaluate_systems",
    "global_pagerank",
    "load_config",
    "parse_events",
    "parse_jobs",
    "personalized_pagerank",
    "recommend",
    "recommend_mf",
    "synth_corpus",
    "window_filter",
]
