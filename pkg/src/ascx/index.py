"""Cluster-skipping inverted index with per-segment maximum weights.

Documents are grouped into m clusters, each cluster split into n segments.
Every cluster holds its own posting lists plus, per term, the maximum
quantized weight within each segment. Those segment maxima are what the
approximate pruning strategies consume at query time.

Raw weights are quantized once at build time to unsigned fixed-point
integers; everything downstream is exact integer arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ascx.clustering import ClusterAssignment, SegmentAssignment
from ascx.core import DataError, Query

MAX_QUANT_BITS = 16


def weight_byte_width(quant_bits: int) -> int:
    return 1 if quant_bits <= 8 else 2


def quantization_scale(max_weight: float, quant_bits: int) -> float:
    """Linear scale mapping the largest corpus weight to the top code.

    Returned value is rounded to float32 so the stored metadata reproduces
    the exact quantization.
    """
    if max_weight <= 0 or not np.isfinite(max_weight):
        raise DataError(f"cannot derive quantization scale from max weight {max_weight}")
    return float(np.float32((2**quant_bits - 1) / max_weight))


def quantize(weight: float, scale: float) -> int:
    """Round-to-nearest fixed-point code for a raw weight."""
    return int(np.rint(weight * scale))


@dataclass(frozen=True)
class PostingList:
    """Sorted postings of one term within one cluster."""

    doc_ids: np.ndarray  # uint32, strictly increasing
    weights: np.ndarray  # uint32, all positive

    def __post_init__(self) -> None:
        if len(self.doc_ids) != len(self.weights):
            raise DataError("posting id/weight arrays differ in length")
        if len(self.doc_ids) == 0:
            raise DataError("empty posting list")
        if np.any(np.diff(self.doc_ids.astype(np.int64)) <= 0):
            raise DataError("posting doc ids not strictly increasing")
        if np.any(self.weights == 0):
            raise DataError("posting weights must be positive")

    def __len__(self) -> int:
        return len(self.doc_ids)


@dataclass(frozen=True)
class SegmentMaxTable:
    """Per-term vectors of segment-maximum weights for one cluster.

    A term absent from the table has all-zero maxima.
    """

    n: int
    maxima: dict[int, np.ndarray]  # term -> int64 vector of length n

    def row(self, term_id: int) -> np.ndarray:
        got = self.maxima.get(term_id)
        if got is None:
            return np.zeros(self.n, dtype=np.int64)
        return got


@dataclass(frozen=True)
class Cluster:
    """One cluster's members, postings, and precomputed maxima."""

    cluster_id: int
    member_docs: np.ndarray  # uint32, sorted
    member_segments: np.ndarray  # uint16, aligned with member_docs
    postings: dict[int, PostingList]
    seg_max: SegmentMaxTable
    term_max: dict[int, int]

    @property
    def doc_count(self) -> int:
        return len(self.member_docs)


@dataclass(frozen=True)
class LexiconEntry:
    global_max: int
    clusters: tuple[int, ...]  # sorted ids of clusters containing the term


@dataclass(frozen=True)
class ClusterBounds:
    """Query-dependent upper-bound summary for one cluster.

    bound_sum uses per-cluster term maxima; max_sbound / avg_sbound come
    from per-segment maxima. The average is kept exact as a numerator over
    the segment count.
    """

    cluster_id: int
    bound_sum: int
    max_sbound: int
    avg_sbound_num: int  # sum of the n segment bounds
    n: int

    def __post_init__(self) -> None:
        if self.max_sbound > self.bound_sum:
            raise DataError("segment bound exceeds whole-cluster bound")
        if self.avg_sbound_num > self.n * self.max_sbound:
            raise DataError("average segment bound exceeds maximum")

    @property
    def avg_sbound(self) -> float:
        return self.avg_sbound_num / self.n


class ClusterSkippingIndex:
    """In-memory engine state: lexicon, clusters, quantization metadata."""

    def __init__(
        self,
        *,
        quant_bits: int,
        quant_scale: float,
        n: int,
        doc_count: int,
        vocab_size: int,
        seg_method: str,
        lexicon: dict[int, LexiconEntry],
        clusters: list[Cluster],
    ) -> None:
        self.quant_bits = quant_bits
        self.quant_scale = quant_scale
        self.n = n
        self.doc_count = doc_count
        self.vocab_size = vocab_size
        self.seg_method = seg_method
        self.lexicon = lexicon
        self.clusters = clusters
        self._flat_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    @property
    def m(self) -> int:
        return len(self.clusters)

    def flat_postings(self, term_id: int) -> tuple[np.ndarray, np.ndarray]:
        """Merged (doc_ids, weights) for a term across all clusters, sorted."""
        cached = self._flat_cache.get(term_id)
        if cached is not None:
            return cached
        entry = self.lexicon.get(term_id)
        if entry is None:
            out = (np.empty(0, dtype=np.uint32), np.empty(0, dtype=np.uint32))
            self._flat_cache[term_id] = out
            return out
        ids = np.concatenate([self.clusters[c].postings[term_id].doc_ids for c in entry.clusters])
        ws = np.concatenate([self.clusters[c].postings[term_id].weights for c in entry.clusters])
        order = np.argsort(ids, kind="stable")
        out = (ids[order], ws[order])
        self._flat_cache[term_id] = out
        return out

    def global_term_max(self, term_id: int) -> int:
        entry = self.lexicon.get(term_id)
        return entry.global_max if entry is not None else 0

    def resegment(self, segments: SegmentAssignment) -> "ClusterSkippingIndex":
        """Same clustering and postings, new segment partition and maxima."""
        new_clusters = []
        for cl in self.clusters:
            segs = np.array(
                [segments.doc_to_segment[int(d)] for d in cl.member_docs], dtype=np.uint16
            )
            if len(segs) and segs.max() >= segments.n:
                raise DataError("segment id out of range during resegmentation")
            seg_of = dict(zip(cl.member_docs.tolist(), segs.tolist()))
            seg_max = _segment_maxima(cl.postings, seg_of, segments.n)
            new_clusters.append(
                Cluster(
                    cluster_id=cl.cluster_id,
                    member_docs=cl.member_docs,
                    member_segments=segs,
                    postings=cl.postings,
                    seg_max=seg_max,
                    term_max=cl.term_max,
                )
            )
        return ClusterSkippingIndex(
            quant_bits=self.quant_bits,
            quant_scale=self.quant_scale,
            n=segments.n,
            doc_count=self.doc_count,
            vocab_size=self.vocab_size,
            seg_method=segments.method,
            lexicon=self.lexicon,
            clusters=new_clusters,
        )


def _segment_maxima(
    postings: dict[int, PostingList], seg_of: dict[int, int], n: int
) -> SegmentMaxTable:
    maxima: dict[int, np.ndarray] = {}
    for term, pl in postings.items():
        row = np.zeros(n, dtype=np.int64)
        for doc, w in zip(pl.doc_ids.tolist(), pl.weights.tolist()):
            s = seg_of[doc]
            if w > row[s]:
                row[s] = w
        maxima[term] = row
    return SegmentMaxTable(n, maxima)


def build_index(
    corpus: Iterable[tuple[int, Mapping[int, float]]],
    clusters: ClusterAssignment,
    segments: SegmentAssignment,
    *,
    quant_bits: int = 8,
    quant_scale: float | None = None,
) -> ClusterSkippingIndex:
    """Quantize a raw corpus and assemble the cluster-skipping structures.

    quant_scale defaults to a linear fit of the corpus maximum into
    quant_bits; pass it explicitly to pin a particular fixed-point grid
    (already-integer corpora round-trip exactly with quant_scale=1.0).
    Weights that quantize to zero are dropped; weights above the grid cap
    are a build error.
    """
    if not 1 <= quant_bits <= MAX_QUANT_BITS:
        raise DataError(f"quant_bits {quant_bits} outside [1, {MAX_QUANT_BITS}]")
    docs: list[tuple[int, list[tuple[int, float]]]] = []
    seen: set[int] = set()
    max_weight = 0.0
    for doc_id, terms in corpus:
        doc_id = int(doc_id)
        if doc_id < 0 or doc_id >= 2**32:
            raise DataError(f"doc id {doc_id} out of u32 range")
        if doc_id in seen:
            raise DataError(f"duplicate doc id {doc_id}")
        seen.add(doc_id)
        entries: list[tuple[int, float]] = []
        for t, w in terms.items():
            t = int(t)
            w = float(w)
            if t < 0 or t >= 2**32:
                raise DataError(f"term id {t} out of u32 range")
            if not np.isfinite(w) or w < 0:
                raise DataError(f"bad weight {w} for term {t} in doc {doc_id}")
            if w == 0:
                continue
            entries.append((t, w))
            if w > max_weight:
                max_weight = w
        docs.append((doc_id, entries))
    if not docs:
        raise DataError("empty corpus")
    if quant_scale is None:
        quant_scale = quantization_scale(max_weight, quant_bits)
    quant_scale = float(np.float32(quant_scale))
    if quant_scale <= 0 or not np.isfinite(quant_scale):
        raise DataError(f"bad quantization scale {quant_scale}")
    cap = 2**quant_bits - 1

    n = segments.n
    per_cluster: list[dict[int, list[tuple[int, int]]]] = [dict() for _ in range(clusters.m)]
    members: list[list[tuple[int, int]]] = [[] for _ in range(clusters.m)]
    vocab_size = 0
    for doc_id, entries in docs:
        cid = clusters.doc_to_cluster.get(doc_id)
        if cid is None:
            raise DataError(f"doc {doc_id} missing from cluster assignment")
        seg = segments.doc_to_segment.get(doc_id)
        if seg is None:
            raise DataError(f"doc {doc_id} missing from segment assignment")
        if not 0 <= seg < n:
            raise DataError(f"segment id {seg} out of range for doc {doc_id}")
        members[cid].append((doc_id, seg))
        bucket = per_cluster[cid]
        for t, w in entries:
            q = quantize(w, quant_scale)
            if q == 0:
                continue
            if q > cap:
                raise DataError(
                    f"weight {w} quantizes to {q}, above the {quant_bits}-bit cap"
                )
            bucket.setdefault(t, []).append((doc_id, q))
            if t + 1 > vocab_size:
                vocab_size = t + 1

    built: list[Cluster] = []
    lex_max: dict[int, int] = {}
    lex_presence: dict[int, list[int]] = {}
    for cid in range(clusters.m):
        ms = sorted(members[cid])
        member_docs = np.array([d for d, _ in ms], dtype=np.uint32)
        member_segments = np.array([s for _, s in ms], dtype=np.uint16)
        seg_of = {d: s for d, s in ms}
        postings: dict[int, PostingList] = {}
        term_max: dict[int, int] = {}
        for t in sorted(per_cluster[cid]):
            pairs = sorted(per_cluster[cid][t])
            pl = PostingList(
                doc_ids=np.array([d for d, _ in pairs], dtype=np.uint32),
                weights=np.array([q for _, q in pairs], dtype=np.uint32),
            )
            postings[t] = pl
            tmax = int(pl.weights.max())
            term_max[t] = tmax
            if tmax > lex_max.get(t, 0):
                lex_max[t] = tmax
            lex_presence.setdefault(t, []).append(cid)
        built.append(
            Cluster(
                cluster_id=cid,
                member_docs=member_docs,
                member_segments=member_segments,
                postings=postings,
                seg_max=_segment_maxima(postings, seg_of, n),
                term_max=term_max,
            )
        )
    lexicon = {
        t: LexiconEntry(lex_max[t], tuple(lex_presence[t])) for t in sorted(lex_max)
    }
    return ClusterSkippingIndex(
        quant_bits=quant_bits,
        quant_scale=quant_scale,
        n=n,
        doc_count=len(docs),
        vocab_size=vocab_size,
        seg_method=segments.method,
        lexicon=lexicon,
        clusters=built,
    )


def segment_bounds(index: ClusterSkippingIndex, query: Query, cluster_id: int) -> list[int]:
    """Upper bound of the query score within each segment of a cluster.

    Segment j's bound sums, over query terms, the query weight times the
    term's maximum weight inside that segment.
    """
    if not 0 <= cluster_id < index.m:
        raise DataError(f"cluster id {cluster_id} out of range")
    table = index.clusters[cluster_id].seg_max
    acc = np.zeros(index.n, dtype=np.int64)
    for t, qw in query.vector:
        row = table.maxima.get(t)
        if row is not None:
            acc += qw * row
    return [int(x) for x in acc]


def cluster_bounds(index: ClusterSkippingIndex, query: Query, cluster_id: int) -> ClusterBounds:
    """bound_sum, max over segment bounds, and their exact average."""
    if not 0 <= cluster_id < index.m:
        raise DataError(f"cluster id {cluster_id} out of range")
    cl = index.clusters[cluster_id]
    bound_sum = 0
    for t, qw in query.vector:
        tmax = cl.term_max.get(t)
        if tmax is not None:
            bound_sum += qw * tmax
    segs = segment_bounds(index, query, cluster_id)
    return ClusterBounds(
        cluster_id=cluster_id,
        bound_sum=bound_sum,
        max_sbound=max(segs),
        avg_sbound_num=sum(segs),
        n=index.n,
    )


def all_cluster_bounds(index: ClusterSkippingIndex, query: Query) -> list[ClusterBounds]:
    return [cluster_bounds(index, query, cid) for cid in range(index.m)]
