"""Session-wide fixtures: the desk-scale corpus and index variants.

Everything here is deterministic (seed-pinned) and built lazily, so unit
test runs that never touch these fixtures pay nothing.
"""

from types import SimpleNamespace

import numpy as np
import pytest

from ascx.clustering import (
    ClusterAssignment,
    kmeans,
    kmeans_subclusters,
    random_uniform_segments,
)
from ascx.evaluation import SyntheticCorpusSpec, gen_corpus
from ascx.index import build_index
from ascx.retrieval import search_exhaustive

DESK_M = 128
DESK_N = 8
DESK_SEED = 7


@pytest.fixture(scope="session")
def desk():
    """50k-doc topical corpus, m=128/n=8 index, and exact top-1001 runs."""
    corpus = gen_corpus(SyntheticCorpusSpec())
    points = corpus.dense.astype(np.float64)
    doc_ids = [d for d, _ in corpus.docs]
    labels, _ = kmeans(points, DESK_M, seed=DESK_SEED)
    clusters = ClusterAssignment.from_labels(doc_ids, labels.tolist(), DESK_M)
    segments = random_uniform_segments(clusters, DESK_N, seed=DESK_SEED)
    index = build_index(corpus.docs, clusters, segments, quant_bits=8)
    oracle = {q.query_id: search_exhaustive(index, q, 1001) for q in corpus.queries}
    return SimpleNamespace(
        corpus=corpus,
        points=points,
        doc_ids=doc_ids,
        clusters=clusters,
        segments=segments,
        index=index,
        queries=corpus.queries,
        oracle=oracle,
    )


@pytest.fixture(scope="session")
def desk_index_n1(desk):
    """Same index with a single segment per cluster."""
    seg1 = random_uniform_segments(desk.clusters, 1, seed=DESK_SEED)
    return desk.index.resegment(seg1)


@pytest.fixture(scope="session")
def desk_index_kmeans_segments(desk):
    """Same clustering, segments from k-means sub-clustering."""
    seg = kmeans_subclusters(
        desk.points, desk.doc_ids, desk.clusters, DESK_N, seed=DESK_SEED
    )
    return desk.index.resegment(seg)


def _index_at_m(desk, m):
    labels, _ = kmeans(desk.points, m, seed=DESK_SEED)
    clusters = ClusterAssignment.from_labels(desk.doc_ids, labels.tolist(), m)
    segments = random_uniform_segments(clusters, DESK_N, seed=DESK_SEED)
    return build_index(desk.corpus.docs, clusters, segments, quant_bits=8)


@pytest.fixture(scope="session")
def desk_index_m32(desk):
    return _index_at_m(desk, 32)


@pytest.fixture(scope="session")
def desk_index_m512(desk):
    return _index_at_m(desk, 512)
