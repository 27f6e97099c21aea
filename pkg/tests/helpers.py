"""Shared builders and independent oracles for the test suite.

The oracles here recompute scores and bounds straight from raw corpus
dicts with plain Python loops, sharing no traversal code with the
engine under test.
"""

import random

from ascx.clustering import ClusterAssignment, SegmentAssignment
from ascx.core import Query, ScoredDoc, SparseVector
from ascx.index import build_index


def brute_score(doc_terms: dict[int, int], query: Query) -> int:
    total = 0
    for t, qw in query.vector:
        if t in doc_terms:
            total += qw * doc_terms[t]
    return total


def brute_top_k(corpus: dict[int, dict[int, int]], query: Query, k: int) -> list[ScoredDoc]:
    scored = [
        ScoredDoc(doc_id, brute_score(terms, query))
        for doc_id, terms in corpus.items()
    ]
    scored = [s for s in scored if s.score > 0]
    scored.sort(key=lambda s: (-s.score, s.doc_id))
    return scored[:k]


def brute_segment_max(
    corpus: dict[int, dict[int, int]],
    members: dict[int, int],  # doc -> segment, for one cluster
    term: int,
    segment: int,
) -> int:
    best = 0
    for doc, seg in members.items():
        if seg == segment:
            w = corpus[doc].get(term, 0)
            if w > best:
                best = w
    return best


def make_integer_corpus(
    rng: random.Random,
    n_docs: int,
    vocab: int,
    max_nnz: int,
    max_weight: int,
) -> dict[int, dict[int, int]]:
    corpus: dict[int, dict[int, int]] = {}
    for doc_id in range(n_docs):
        nnz = rng.randrange(0, max_nnz + 1)
        terms = {rng.randrange(vocab): rng.randrange(1, max_weight + 1) for _ in range(nnz)}
        corpus[doc_id] = terms
    return corpus


def random_partition(rng: random.Random, doc_ids: list[int], m: int) -> ClusterAssignment:
    labels = [rng.randrange(m) for _ in doc_ids]
    # guarantee every cluster non-empty when possible
    for cid in range(min(m, len(doc_ids))):
        labels[cid] = cid
    return ClusterAssignment.from_labels(doc_ids, labels, m)


def random_segmentation(
    rng: random.Random, doc_ids: list[int], n: int
) -> SegmentAssignment:
    return SegmentAssignment(n, {d: rng.randrange(n) for d in doc_ids}, "random")


def build_small_index(
    seed: int,
    *,
    n_docs: int = 60,
    vocab: int = 30,
    max_nnz: int = 8,
    max_weight: int = 50,
    m: int = 4,
    n: int = 3,
    quant_bits: int = 8,
):
    """Random integer corpus plus an index over it (scale 1, exact weights).

    Returns (index, corpus, cluster_assignment, segment_assignment).
    """
    rng = random.Random(seed)
    corpus = make_integer_corpus(rng, n_docs, vocab, max_nnz, max_weight)
    doc_ids = sorted(corpus)
    clusters = random_partition(rng, doc_ids, m)
    segments = random_segmentation(rng, doc_ids, n)
    index = build_index(
        ((d, {t: float(w) for t, w in terms.items()}) for d, terms in corpus.items()),
        clusters,
        segments,
        quant_bits=quant_bits,
        quant_scale=1.0,
    )
    return index, corpus, clusters, segments


def random_query(
    rng: random.Random, vocab: int, max_len: int = 6, query_id: str | None = None
) -> Query:
    terms = [rng.randrange(vocab) for _ in range(rng.randrange(1, max_len + 1))]
    qid = query_id if query_id is not None else f"q{rng.randrange(10**6)}"
    return Query.from_term_ids(qid, terms)


def doc_dict_to_vector(terms: dict[int, int]) -> SparseVector:
    return SparseVector.from_dict(terms)


def index_fields_equal(a, b) -> bool:
    """Deep structural comparison of two indexes, array by array."""
    import numpy as np

    if (
        a.quant_bits != b.quant_bits
        or a.quant_scale != b.quant_scale
        or a.m != b.m
        or a.n != b.n
        or a.doc_count != b.doc_count
        or a.vocab_size != b.vocab_size
        or a.seg_method != b.seg_method
    ):
        return False
    if a.lexicon.keys() != b.lexicon.keys():
        return False
    for t in a.lexicon:
        if a.lexicon[t] != b.lexicon[t]:
            return False
    for ca, cb in zip(a.clusters, b.clusters):
        if not np.array_equal(ca.member_docs, cb.member_docs):
            return False
        if not np.array_equal(ca.member_segments, cb.member_segments):
            return False
        if ca.postings.keys() != cb.postings.keys():
            return False
        for t in ca.postings:
            if not np.array_equal(ca.postings[t].doc_ids, cb.postings[t].doc_ids):
                return False
            if not np.array_equal(ca.postings[t].weights, cb.postings[t].weights):
                return False
            if not np.array_equal(ca.seg_max.row(t), cb.seg_max.row(t)):
                return False
        if ca.term_max != cb.term_max:
            return False
    return True
