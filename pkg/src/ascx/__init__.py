"""Cluster-skipping sparse retrieval with segmented bound pruning."""

from ascx.clustering import (
    ClusterAssignment,
    SegmentAssignment,
    kmeans,
    kmeans_subclusters,
    random_projection,
    random_uniform_segments,
)
from ascx.core import (
    DataError,
    PruneParams,
    Query,
    Rational,
    ScoredDoc,
    SparseVector,
    TopKAccumulator,
    rank_score,
    topk_compare,
)
from ascx.evaluation import (
    Qrels,
    SyntheticCorpusSpec,
    analyze_bounds,
    gen_corpus,
    mrr_at_k,
    recall_at_k,
    reports_to_run,
    score_ratio_curve,
)
from ascx.index import ClusterSkippingIndex, build_index, cluster_bounds
from ascx.retrieval import (
    STRATEGIES,
    SearchReport,
    audit_report,
    read_trace,
    run_strategy,
    search_anytime,
    search_anytime_star,
    search_asc,
    search_exhaustive,
    search_maxscore,
    write_trace,
)
from ascx.storage import read_index, write_index

__all__ = [
    "ClusterAssignment",
    "ClusterSkippingIndex",
    "DataError",
    "PruneParams",
    "Qrels",
    "Query",
    "Rational",
    "STRATEGIES",
    "ScoredDoc",
    "SearchReport",
    "SegmentAssignment",
    "SparseVector",
    "SyntheticCorpusSpec",
    "TopKAccumulator",
    "analyze_bounds",
    "audit_report",
    "build_index",
    "cluster_bounds",
    "gen_corpus",
    "kmeans",
    "kmeans_subclusters",
    "mrr_at_k",
    "random_projection",
    "random_uniform_segments",
    "rank_score",
    "read_index",
    "read_trace",
    "recall_at_k",
    "reports_to_run",
    "score_ratio_curve",
    "run_strategy",
    "search_anytime",
    "search_anytime_star",
    "search_asc",
    "search_exhaustive",
    "search_maxscore",
    "topk_compare",
    "write_index",
    "write_trace",
]

__version__ = "0.1.0"
