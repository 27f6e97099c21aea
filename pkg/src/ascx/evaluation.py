"""Evaluation harness: synthetic corpora, quality metrics, bound audits.

Run data passes between tools as TREC-style run files; judgments as
four-column qrels. Metrics operate on a Run mapping query_id to a ranked
list of (doc_id, score).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ascx.core import DataError, Query
from ascx.index import ClusterSkippingIndex
from ascx.retrieval import SearchReport, _exhaustive_candidates

Run = dict[str, list[tuple[int, float]]]


@dataclass(frozen=True)
class Qrels:
    """Graded judgments per query.

    When the grade set has more than one level, the lowest level counts as
    irrelevant; with a single level, anything above zero is relevant.
    """

    judgments: dict[str, dict[int, int]]

    def relevance_floor(self) -> int:
        grades = sorted({g for by_doc in self.judgments.values() for g in by_doc.values()})
        if not grades:
            return 0
        if len(grades) == 1:
            return 0
        return grades[0]

    def relevant_docs(self, query_id: str) -> set[int]:
        floor = self.relevance_floor()
        by_doc = self.judgments.get(query_id, {})
        return {d for d, g in by_doc.items() if g > floor}


def read_qrels(path: str) -> Qrels:
    judgments: dict[str, dict[int, int]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise DataError(f"{path}:{ln}: expected 4 qrels columns, got {len(parts)}")
            qid, _, doc, grade = parts
            try:
                doc_i = int(doc)
                grade_i = int(grade)
            except ValueError as e:
                raise DataError(f"{path}:{ln}: non-integer doc id or grade") from e
            if grade_i < 0:
                raise DataError(f"{path}:{ln}: negative grade")
            judgments.setdefault(qid, {})[doc_i] = grade_i
    return Qrels(judgments)


def write_qrels(path: str, qrels: Qrels) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for qid in sorted(qrels.judgments):
            for doc in sorted(qrels.judgments[qid]):
                fh.write(f"{qid} 0 {doc} {qrels.judgments[qid][doc]}\n")


def reports_to_run(reports: Iterable[SearchReport], scale: float) -> Run:
    """Convert integer-scored reports to a run with descaled float scores."""
    run: Run = {}
    for rep in reports:
        if rep.query_id in run:
            raise DataError(f"duplicate query id {rep.query_id} in reports")
        run[rep.query_id] = [(r.doc_id, r.score / scale) for r in rep.results]
    return run


def write_run_trec(path: str, run: Run, tag: str) -> None:
    """qid Q0 docid rank score tag, scores as fixed-point decimals."""
    with open(path, "w", encoding="ascii") as fh:
        for qid, ranked in run.items():
            for rank, (doc, score) in enumerate(ranked, start=1):
                fh.write(f"{qid} Q0 {doc} {rank} {score:.6f} {tag}\n")


def read_run_trec(path: str) -> Run:
    run: dict[str, list[tuple[int, int, float]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise DataError(f"{path}:{ln}: expected 6 run columns, got {len(parts)}")
            qid, _, doc, rank, score, _tag = parts
            try:
                entry = (int(rank), int(doc), float(score))
            except ValueError as e:
                raise DataError(f"{path}:{ln}: malformed rank, doc id, or score") from e
            run.setdefault(qid, []).append(entry)
    out: Run = {}
    for qid, entries in run.items():
        entries.sort()
        ranks = [r for r, _, _ in entries]
        if ranks != list(range(1, len(ranks) + 1)):
            raise DataError(f"run {path}: query {qid} ranks are not 1..{len(ranks)}")
        out[qid] = [(doc, score) for _, doc, score in entries]
    return out


def _reference_sets(run: Run, reference: "Run | Qrels", k: int) -> dict[str, set[int]]:
    refs: dict[str, set[int]] = {}
    missing: list[str] = []
    for qid in run:
        if isinstance(reference, Qrels):
            if qid not in reference.judgments:
                missing.append(qid)
                continue
            refs[qid] = reference.relevant_docs(qid)
        else:
            if qid not in reference:
                missing.append(qid)
                continue
            refs[qid] = {doc for doc, _ in reference[qid][:k]}
    if missing:
        raise DataError(f"queries missing from reference: {', '.join(sorted(missing))}")
    return refs


def recall_at_k(run: Run, reference: "Run | Qrels", k: int) -> tuple[float, dict[str, float]]:
    """Fraction of reference documents present in the run's top k.

    The reference is either graded judgments or another run (whose top k
    doc ids become the target set). Queries with an empty reference set are
    skipped. Raises when the reference lacks a query present in the run.
    """
    if k <= 0:
        raise DataError(f"k must be positive, got {k}")
    refs = _reference_sets(run, reference, k)
    per_query: dict[str, float] = {}
    for qid, ranked in run.items():
        ref = refs[qid]
        if not ref:
            continue
        top = {doc for doc, _ in ranked[:k]}
        per_query[qid] = len(top & ref) / len(ref)
    if not per_query:
        raise DataError("no query had a non-empty reference set")
    return sum(per_query.values()) / len(per_query), per_query


def mrr_at_k(run: Run, qrels: Qrels, k: int) -> tuple[float, dict[str, float]]:
    """Mean reciprocal rank of the first relevant document within top k."""
    if k <= 0:
        raise DataError(f"k must be positive, got {k}")
    refs = _reference_sets(run, qrels, k)
    per_query: dict[str, float] = {}
    for qid, ranked in run.items():
        ref = refs[qid]
        if not ref:
            continue
        rr = 0.0
        for rank, (doc, _) in enumerate(ranked[:k], start=1):
            if doc in ref:
                rr = 1.0 / rank
                break
        per_query[qid] = rr
    if not per_query:
        raise DataError("no query had a non-empty reference set")
    return sum(per_query.values()) / len(per_query), per_query


def score_ratio_curve(run: Run, oracle_run: Run, ks: Sequence[int]) -> list[tuple[int, float]]:
    """Mean over queries of avg-top-k' score ratios, per cutoff k'.

    Ranks past the end of a list contribute zero; a query with a zero
    oracle average contributes ratio 1. Raises if the oracle run lacks a
    query present in the run.
    """
    if not run:
        raise DataError("empty run")
    missing = [qid for qid in run if qid not in oracle_run]
    if missing:
        raise DataError(f"queries missing from oracle run: {', '.join(sorted(missing))}")
    curve: list[tuple[int, float]] = []
    for kp in ks:
        if kp <= 0:
            raise DataError(f"cutoff {kp} must be positive")
        total = 0.0
        for qid, ranked in run.items():
            oracle_sum = sum(s for _, s in oracle_run[qid][:kp])
            if oracle_sum <= 0:
                total += 1.0
                continue
            got_sum = sum(s for _, s in ranked[:kp])
            total += got_sum / oracle_sum
        curve.append((kp, total / len(run)))
    return curve


@dataclass(frozen=True)
class BoundRow:
    """One (cluster, query) bound audit entry."""

    cluster_id: int
    query_id: str
    actual: int
    bound_sum: int
    max_sbound: int
    avg_sbound: float


@dataclass(frozen=True)
class BoundAnalysis:
    """Corpus-level tightness summary of the bound estimates."""

    mean_actual_over_bound_sum: float
    mean_actual_over_max_sbound: float
    mean_gap_over_actual: float
    mean_avg_over_max: float
    rows: int


def analyze_bounds(
    index: ClusterSkippingIndex, queries: Sequence[Query]
) -> tuple[BoundAnalysis, list[BoundRow]]:
    """Compare true per-cluster score maxima with the stored bounds.

    Emits one row per (query, cluster) pair where the cluster contains at
    least one query term. The exact maximum comes from scoring every
    matching document, so this is an audit pass, not an estimate.
    """
    from ascx.index import cluster_bounds

    cluster_of: dict[int, int] = {}
    for cl in index.clusters:
        for d in cl.member_docs.tolist():
            cluster_of[d] = cl.cluster_id
    rows: list[BoundRow] = []
    r_bs: list[float] = []
    r_ms: list[float] = []
    r_gap: list[float] = []
    r_avg: list[float] = []
    for q in queries:
        if q.degenerate:
            continue
        ids, scores = _exhaustive_candidates(index, q)
        actual: dict[int, int] = {}
        for d, s in zip(ids.tolist(), scores.tolist()):
            cid = cluster_of[d]
            if s > actual.get(cid, 0):
                actual[cid] = s
        for cid in range(index.m):
            b = cluster_bounds(index, q, cid)
            if b.bound_sum == 0:
                continue
            best = actual.get(cid, 0)
            avg = b.avg_sbound_num / b.n
            rows.append(
                BoundRow(
                    cluster_id=cid,
                    query_id=q.query_id,
                    actual=best,
                    bound_sum=b.bound_sum,
                    max_sbound=b.max_sbound,
                    avg_sbound=avg,
                )
            )
            r_bs.append(best / b.bound_sum)
            r_ms.append(best / b.max_sbound)
            if best > 0:
                r_gap.append((b.max_sbound - avg) / best)
            r_avg.append(avg / b.max_sbound)
    if not rows:
        raise DataError("no (query, cluster) pair produced a positive bound")
    mean = lambda xs: sum(xs) / len(xs) if xs else 0.0
    return (
        BoundAnalysis(
            mean_actual_over_bound_sum=mean(r_bs),
            mean_actual_over_max_sbound=mean(r_ms),
            mean_gap_over_actual=mean(r_gap),
            mean_avg_over_max=mean(r_avg),
            rows=len(rows),
        ),
        rows,
    )


def write_bounds_csv(path: str, rows: Sequence[BoundRow]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("cluster_id,query_id,actual,bound_sum,max_sbound,avg_sbound\n")
        for r in rows:
            fh.write(
                f"{r.cluster_id},{r.query_id},{r.actual},{r.bound_sum},"
                f"{r.max_sbound},{r.avg_sbound:.6f}\n"
            )


@dataclass(frozen=True)
class LatencyStats:
    mean_ms: float
    p99_ms: float
    samples: int


def latency_stats(samples_ms: Sequence[float]) -> LatencyStats:
    """Mean and nearest-rank 99th percentile of latency samples."""
    if not samples_ms:
        raise DataError("latency stats need at least one sample")
    ordered = sorted(samples_ms)
    rank = math.ceil(0.99 * len(ordered))  # nearest-rank, 1-based
    return LatencyStats(
        mean_ms=sum(ordered) / len(ordered),
        p99_ms=ordered[rank - 1],
        samples=len(ordered),
    )


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    """Knobs for the synthetic topical corpus generator."""

    docs: int = 50_000
    vocab: int = 5_000
    topics: int = 200
    mean_nnz: int = 40
    n_queries: int = 200
    query_len: int = 8
    dims: int = 64
    noise: float = 0.3
    zipf: float = 1.1
    topic_share: float = 0.8
    weight_mu: float = 0.7
    weight_sigma: float = 0.4
    seed: int = 7

    def __post_init__(self) -> None:
        if self.topics > self.vocab:
            raise DataError("more topics than vocabulary terms")
        if not 0.0 <= self.topic_share <= 1.0:
            raise DataError("topic_share outside [0, 1]")
        for name in ("docs", "vocab", "topics", "mean_nnz", "n_queries", "query_len", "dims"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1")


@dataclass
class SyntheticCorpus:
    docs: list[tuple[int, dict[int, float]]]
    dense: np.ndarray  # float32, row per doc
    queries: list[Query]
    qrels: Qrels
    doc_topics: np.ndarray
    query_topics: np.ndarray


def _topic_mixtures(spec: SyntheticCorpusSpec) -> np.ndarray:
    """Per-topic term distributions: a Zipf-ranked private block blended
    with a global Zipf background."""
    v = spec.vocab
    background = 1.0 / np.arange(1, v + 1) ** spec.zipf
    background /= background.sum()
    block = v // spec.topics
    mixtures = np.empty((spec.topics, v), dtype=np.float64)
    for t in range(spec.topics):
        own = np.zeros(v, dtype=np.float64)
        lo = t * block
        hi = lo + block if t < spec.topics - 1 else v
        ranks = np.arange(1, hi - lo + 1, dtype=np.float64)
        own[lo:hi] = 1.0 / ranks**spec.zipf
        own /= own.sum()
        mixtures[t] = spec.topic_share * own + (1.0 - spec.topic_share) * background
    return mixtures


def gen_corpus(spec: SyntheticCorpusSpec) -> SyntheticCorpus:
    """Deterministic topical corpus with dense counterparts and queries.

    Documents draw a latent topic, then sample term ids from the topic's
    Zipf mixture; distinct terms get log-normal weights. The dense
    counterpart of a document is its topic centroid plus isotropic noise.
    Queries sample short token lists from a topic mixture (term weight =
    multiplicity); qrels mark every same-topic document grade 1.
    """
    rng = np.random.default_rng(spec.seed)
    mixtures = _topic_mixtures(spec)
    centroids = rng.normal(0.0, 1.0, size=(spec.topics, spec.dims))
    doc_topics = rng.integers(0, spec.topics, size=spec.docs)
    nnz = np.clip(rng.poisson(spec.mean_nnz, size=spec.docs), 3, None)
    term_lists: list[dict[int, float] | None] = [None] * spec.docs
    for t in range(spec.topics):
        members = np.flatnonzero(doc_topics == t)
        if len(members) == 0:
            continue
        counts = nnz[members]
        tokens = rng.choice(spec.vocab, size=int(counts.sum()), p=mixtures[t])
        offsets = np.concatenate([[0], np.cumsum(counts)])
        for i, doc in enumerate(members):
            distinct = np.unique(tokens[offsets[i] : offsets[i + 1]])
            weights = rng.lognormal(spec.weight_mu, spec.weight_sigma, size=len(distinct))
            term_lists[doc] = {
                int(term): float(w) for term, w in zip(distinct, weights)
            }
    dense = centroids[doc_topics] + spec.noise * rng.normal(size=(spec.docs, spec.dims))
    query_topics = rng.integers(0, spec.topics, size=spec.n_queries)
    queries: list[Query] = []
    for i, t in enumerate(query_topics):
        tokens = rng.choice(spec.vocab, size=spec.query_len, p=mixtures[t])
        queries.append(Query.from_term_ids(f"q{i}", (int(x) for x in tokens)))
    judgments = {
        f"q{i}": {int(d): 1 for d in np.flatnonzero(doc_topics == t)}
        for i, t in enumerate(query_topics)
    }
    docs = [(i, term_lists[i] or {}) for i in range(spec.docs)]
    return SyntheticCorpus(
        docs=docs,
        dense=dense.astype(np.float32),
        queries=queries,
        qrels=Qrels(judgments),
        doc_topics=doc_topics,
        query_topics=query_topics,
    )
