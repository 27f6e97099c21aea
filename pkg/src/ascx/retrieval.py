"""Top-k search strategies over the cluster-skipping index.

All strategies share one bounded accumulator whose running threshold
drives pruning. Document-at-a-time scanning follows the term-partitioning
scheme: per posting-list set, terms are split into an essential suffix
(sorted by maximum contribution) and a non-essential prefix whose summed
maxima cannot beat the threshold on their own.

Approximate variants scale the threshold by an exact rational factor:
a bound B is pruned against theta/f via f.num*B <= f.den*theta, so no
float ever enters a pruning decision.

    strategy        cluster visit order   cluster prune          document prune
    exhaustive      all clusters          never                  never
    maxscore        flat (no clusters)    n/a                    B <= theta
    anytime         bound_sum desc        bound_sum <= theta     B <= theta
    anytime-star    bound_sum desc        bound_sum <= theta/mu  B <= theta/mu
    asc             max_sbound desc       max_sbound <= theta/mu
                                          and avg_sbound <= theta/eta
                                                                 B <= theta/eta
"""

from __future__ import annotations

import json
import time
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from ascx.core import (
    RATIONAL_ONE,
    DataError,
    PruneParams,
    Query,
    Rational,
    ScoredDoc,
    SparseVector,
    TopKAccumulator,
    rank_score,
    ranking_key,
)
from ascx.index import ClusterBounds, ClusterSkippingIndex, all_cluster_bounds

STRATEGIES = ("oracle", "maxscore", "anytime", "anytime-star", "asc")


@dataclass(frozen=True, slots=True)
class PruneEvent:
    """One pruning decision, with the bounds it was based on.

    kind is "cluster" or "document". Cluster events carry the full bound
    summary; document events carry the document's score upper bound at the
    moment it was abandoned. theta is the accumulator threshold the
    decision compared against.
    """

    kind: str
    theta: int
    cluster_id: int | None = None
    bound_sum: int | None = None
    max_sbound: int | None = None
    avg_sbound_num: int | None = None
    n: int | None = None
    doc_id: int | None = None
    bound: int | None = None


@dataclass(frozen=True, slots=True)
class ClusterVisit:
    """Bounds of a cluster that was visited (not pruned), for audits."""

    cluster_id: int
    theta: int
    bound_sum: int
    max_sbound: int
    avg_sbound_num: int
    n: int


@dataclass
class SearchReport:
    """Outcome of one query: ranking plus traversal accounting."""

    query_id: str
    strategy: str
    results: list[ScoredDoc]
    params: PruneParams | None = None
    clusters_total: int = 0
    clusters_visited: int = 0
    docs_scored: int = 0
    elapsed_ms: float = 0.0
    max_cluster_ms: float = 0.0
    terminated_by_budget: bool = False
    prune_events: list[PruneEvent] = field(default_factory=list)
    visit_events: list[ClusterVisit] = field(default_factory=list)


class _TermCursor:
    """One posting list in the scan, with its scaled maximum."""

    __slots__ = ("ids", "weights", "qw", "max_contribution", "pos")

    def __init__(self, ids: list[int], weights: list[int], qw: int, term_max: int) -> None:
        self.ids = ids
        self.weights = weights
        self.qw = qw
        self.max_contribution = qw * term_max
        self.pos = 0


def _maxscore_scan(
    cursors: list[_TermCursor],
    acc: TopKAccumulator,
    factor: Rational,
    *,
    cluster_id: int | None,
    events: list[PruneEvent] | None,
) -> int:
    """Scan a posting-list set document-at-a-time, pruning against
    acc.threshold / factor. Returns the number of fully scored documents."""
    cursors = sorted(cursors, key=lambda c: c.max_contribution)
    count = len(cursors)
    prefix = [0] * (count + 1)
    for i, c in enumerate(cursors):
        prefix[i + 1] = prefix[i] + c.max_contribution
    scored = 0
    essential = 0  # cursors[:essential] cannot beat the threshold alone
    theta = acc.threshold
    while essential < count and factor.le_div(prefix[essential + 1], theta):
        essential += 1
    while True:
        if essential >= count:
            break
        candidate = -1
        for c in cursors[essential:]:
            if c.pos < len(c.ids):
                head = c.ids[c.pos]
                if candidate < 0 or head < candidate:
                    candidate = head
        if candidate < 0:
            break
        partial = 0
        for c in cursors[essential:]:
            if c.pos < len(c.ids) and c.ids[c.pos] == candidate:
                partial += c.qw * c.weights[c.pos]
                c.pos += 1
        abandoned = False
        bound = partial + prefix[essential]
        if essential > 0 and factor.le_div(bound, theta):
            abandoned = True
        else:
            for i in range(essential - 1, -1, -1):
                c = cursors[i]
                p = bisect_left(c.ids, candidate, c.pos)
                c.pos = p
                if p < len(c.ids) and c.ids[p] == candidate:
                    partial += c.qw * c.weights[p]
                    c.pos = p + 1
                bound = partial + prefix[i]
                # prefix[0] == 0: a fully resolved score is offered, never pruned
                if i > 0 and factor.le_div(bound, theta):
                    abandoned = True
                    break
        if abandoned:
            if events is not None:
                events.append(
                    PruneEvent(
                        kind="document",
                        theta=theta,
                        cluster_id=cluster_id,
                        doc_id=candidate,
                        bound=bound,
                    )
                )
        else:
            acc.offer(candidate, partial)
            scored += 1
            new_theta = acc.threshold
            if new_theta != theta:
                theta = new_theta
                while essential < count and factor.le_div(prefix[essential + 1], theta):
                    essential += 1
    return scored


def _cluster_cursors(index: ClusterSkippingIndex, cluster_id: int, query: Query) -> list[_TermCursor]:
    cl = index.clusters[cluster_id]
    cursors = []
    for t, qw in query.vector:
        pl = cl.postings.get(t)
        if pl is not None:
            cursors.append(
                _TermCursor(pl.doc_ids.tolist(), pl.weights.tolist(), qw, cl.term_max[t])
            )
    return cursors


def _flat_cursors(index: ClusterSkippingIndex, query: Query) -> list[_TermCursor]:
    cursors = []
    for t, qw in query.vector:
        ids, ws = index.flat_postings(t)
        if len(ids):
            cursors.append(_TermCursor(ids.tolist(), ws.tolist(), qw, index.global_term_max(t)))
    return cursors


def _exhaustive_candidates(index: ClusterSkippingIndex, query: Query) -> tuple[np.ndarray, np.ndarray]:
    """(doc_ids, scores) of every document matching at least one query term."""
    lists = [(qw, *index.flat_postings(t)) for t, qw in query.vector]
    lists = [(qw, ids, ws) for qw, ids, ws in lists if len(ids)]
    if not lists:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    max_id = max(int(ids[-1]) for _, ids, _ in lists)
    if max_id <= max(4 * index.doc_count, 1 << 16):
        scores = np.zeros(max_id + 1, dtype=np.int64)
        for qw, ids, ws in lists:
            scores[ids] += qw * ws.astype(np.int64)
        nz = np.flatnonzero(scores)
        return nz, scores[nz]
    table: dict[int, int] = {}
    for qw, ids, ws in lists:
        for d, w in zip(ids.tolist(), ws.tolist()):
            table[d] = table.get(d, 0) + qw * w
    ids_out = np.fromiter(table.keys(), dtype=np.int64, count=len(table))
    sc_out = np.fromiter(table.values(), dtype=np.int64, count=len(table))
    order = np.argsort(ids_out)
    return ids_out[order], sc_out[order]


def _top_k_of(ids: np.ndarray, scores: np.ndarray, k: int) -> list[ScoredDoc]:
    if len(ids) == 0:
        return []
    order = np.lexsort((ids, -scores))[:k]
    return [ScoredDoc(int(ids[i]), int(scores[i])) for i in order]


def search_exhaustive(
    target: ClusterSkippingIndex | Sequence[tuple[int, SparseVector]],
    query: Query,
    k: int,
) -> SearchReport:
    """Score every matching document and return the exact top k.

    Accepts either an index or a raw sequence of (doc_id, vector) pairs.
    Returns all matching documents, ranked, when k exceeds their number.
    """
    if k <= 0:
        raise DataError(f"k must be positive, got {k}")
    start = time.perf_counter()
    if isinstance(target, ClusterSkippingIndex):
        if query.degenerate:
            report = SearchReport(query.query_id, "oracle", [], clusters_total=target.m)
            report.elapsed_ms = (time.perf_counter() - start) * 1000.0
            return report
        ids, scores = _exhaustive_candidates(target, query)
        results = _top_k_of(ids, scores, k)
        report = SearchReport(
            query.query_id,
            "oracle",
            results,
            clusters_total=target.m,
            clusters_visited=target.m,
            docs_scored=len(ids),
        )
    else:
        scored = [
            ScoredDoc(doc_id, rank_score(vec, query)) for doc_id, vec in target
        ]
        scored = [s for s in scored if s.score > 0]
        scored.sort(key=ranking_key)
        report = SearchReport(
            query.query_id, "oracle", scored[:k], docs_scored=len(scored)
        )
    report.elapsed_ms = (time.perf_counter() - start) * 1000.0
    return report


def search_maxscore(
    index: ClusterSkippingIndex,
    query: Query,
    k: int,
    *,
    record_events: bool = False,
) -> SearchReport:
    """Rank-safe document-at-a-time search over the whole index, treated
    as a single posting-list set."""
    if k <= 0:
        raise DataError(f"k must be positive, got {k}")
    start = time.perf_counter()
    acc = TopKAccumulator(k)
    events: list[PruneEvent] | None = [] if record_events else None
    scored = 0
    if not query.degenerate:
        cursors = _flat_cursors(index, query)
        if cursors:
            scored = _maxscore_scan(cursors, acc, RATIONAL_ONE, cluster_id=None, events=events)
    report = SearchReport(
        query.query_id,
        "maxscore",
        acc.results(),
        clusters_total=index.m,
        clusters_visited=index.m,
        docs_scored=scored,
        prune_events=events or [],
    )
    report.elapsed_ms = (time.perf_counter() - start) * 1000.0
    return report


def should_prune_cluster(bounds: ClusterBounds, theta: int, params: PruneParams) -> bool:
    """Two-level skip test: the segment maximum must clear theta/mu and the
    segment average must clear theta/eta for the cluster to be pruned."""
    if not params.mu.le_div(bounds.max_sbound, theta):
        return False
    return params.eta.num * bounds.avg_sbound_num <= params.eta.den * bounds.n * theta


def _prune_anytime(factor: Rational) -> Callable[[ClusterBounds, int, PruneParams], bool]:
    def rule(bounds: ClusterBounds, theta: int, params: PruneParams) -> bool:
        return factor.le_div(bounds.bound_sum, theta)

    return rule


def _search_clustered(
    index: ClusterSkippingIndex,
    query: Query,
    params: PruneParams,
    *,
    strategy: str,
    order_key: Callable[[ClusterBounds], int],
    prune_rule: Callable[[ClusterBounds, int, PruneParams], bool],
    doc_factor: Rational,
    record_events: bool,
) -> SearchReport:
    start = time.perf_counter()
    report = SearchReport(
        query.query_id, strategy, [], params=params, clusters_total=index.m
    )
    if query.degenerate:
        report.elapsed_ms = (time.perf_counter() - start) * 1000.0
        return report
    bounds = all_cluster_bounds(index, query)
    order = sorted(range(index.m), key=lambda c: (-order_key(bounds[c]), c))
    acc = TopKAccumulator(params.k)
    events: list[PruneEvent] | None = [] if record_events else None
    budget_ms = params.time_budget_ms
    last_mark = start
    for walked, cid in enumerate(order):
        b = bounds[cid]
        theta = acc.threshold
        if prune_rule(b, theta, params):
            if events is not None:
                events.append(
                    PruneEvent(
                        kind="cluster",
                        theta=theta,
                        cluster_id=cid,
                        bound_sum=b.bound_sum,
                        max_sbound=b.max_sbound,
                        avg_sbound_num=b.avg_sbound_num,
                        n=b.n,
                    )
                )
        else:
            if record_events:
                report.visit_events.append(
                    ClusterVisit(
                        cluster_id=cid,
                        theta=theta,
                        bound_sum=b.bound_sum,
                        max_sbound=b.max_sbound,
                        avg_sbound_num=b.avg_sbound_num,
                        n=b.n,
                    )
                )
            report.clusters_visited += 1
            cursors = _cluster_cursors(index, cid, query)
            if cursors:
                report.docs_scored += _maxscore_scan(
                    cursors, acc, doc_factor, cluster_id=cid, events=events
                )
        now = time.perf_counter()
        cluster_ms = (now - last_mark) * 1000.0
        last_mark = now
        if cluster_ms > report.max_cluster_ms:
            report.max_cluster_ms = cluster_ms
        if budget_ms is not None and (now - start) * 1000.0 >= budget_ms:
            if walked + 1 < len(order):
                report.terminated_by_budget = True
            break
    report.results = acc.results()
    if events is not None:
        report.prune_events = events
    report.elapsed_ms = (time.perf_counter() - start) * 1000.0
    return report


def search_anytime(
    index: ClusterSkippingIndex,
    query: Query,
    params: PruneParams,
    *,
    record_events: bool = False,
) -> SearchReport:
    """Rank-safe cluster walk in bound_sum order; skips clusters whose
    whole-cluster bound cannot beat the threshold."""
    return _search_clustered(
        index,
        query,
        params,
        strategy="anytime",
        order_key=lambda b: b.bound_sum,
        prune_rule=_prune_anytime(RATIONAL_ONE),
        doc_factor=RATIONAL_ONE,
        record_events=record_events,
    )


def search_anytime_star(
    index: ClusterSkippingIndex,
    query: Query,
    params: PruneParams,
    *,
    record_events: bool = False,
) -> SearchReport:
    """Approximate variant of the bound_sum walk: both cluster and document
    pruning compare against theta/mu."""
    return _search_clustered(
        index,
        query,
        params,
        strategy="anytime-star",
        order_key=lambda b: b.bound_sum,
        prune_rule=_prune_anytime(params.mu),
        doc_factor=params.mu,
        record_events=record_events,
    )


def search_asc(
    index: ClusterSkippingIndex,
    query: Query,
    params: PruneParams,
    *,
    record_events: bool = False,
) -> SearchReport:
    """Segment-aware approximate walk in max_sbound order.

    A cluster is skipped only when its best segment bound clears theta/mu
    and the segment average clears theta/eta; surviving clusters scan with
    document pruning against theta/eta.
    """
    return _search_clustered(
        index,
        query,
        params,
        strategy="asc",
        order_key=lambda b: b.max_sbound,
        prune_rule=should_prune_cluster,
        doc_factor=params.eta,
        record_events=record_events,
    )


def run_strategy(
    index: ClusterSkippingIndex,
    query: Query,
    strategy: str,
    params: PruneParams,
    *,
    record_events: bool = False,
) -> SearchReport:
    """Dispatch by strategy tag (see STRATEGIES)."""
    if strategy == "oracle":
        return search_exhaustive(index, query, params.k)
    if strategy == "maxscore":
        return search_maxscore(index, query, params.k, record_events=record_events)
    if strategy == "anytime":
        return search_anytime(index, query, params, record_events=record_events)
    if strategy == "anytime-star":
        return search_anytime_star(index, query, params, record_events=record_events)
    if strategy == "asc":
        return search_asc(index, query, params, record_events=record_events)
    raise DataError(f"unknown strategy {strategy!r}")


def audit_report(report: SearchReport) -> list[str]:
    """Re-verify every recorded pruning decision of a traced run.

    Checks, in exact integer arithmetic, that each cluster prune satisfied
    the strategy's skip rule at its recorded threshold, that each document
    prune satisfied the document rule, and that every visited cluster
    whose max_sbound cleared theta/mu had a bound gap strictly below
    (1/mu - 1/eta) * theta. Returns human-readable violations; empty means
    the trace is consistent.
    """
    problems: list[str] = []
    params = report.params
    if params is None:
        return ["report carries no pruning parameters"]
    mu, eta = params.mu, params.eta
    for ev in report.prune_events:
        where = f"query {report.query_id} cluster {ev.cluster_id}"
        if ev.kind == "cluster":
            if report.strategy == "anytime":
                ok = ev.bound_sum is not None and ev.bound_sum <= ev.theta
            elif report.strategy == "anytime-star":
                ok = ev.bound_sum is not None and mu.le_div(ev.bound_sum, ev.theta)
            else:
                ok = (
                    ev.max_sbound is not None
                    and ev.avg_sbound_num is not None
                    and ev.n is not None
                    and mu.le_div(ev.max_sbound, ev.theta)
                    and eta.num * ev.avg_sbound_num <= eta.den * ev.n * ev.theta
                )
            if not ok:
                problems.append(f"{where}: cluster prune violates skip rule at theta={ev.theta}")
        elif ev.kind == "document":
            factor = {
                "anytime": RATIONAL_ONE,
                "anytime-star": mu,
                "asc": eta,
                "maxscore": RATIONAL_ONE,
            }.get(report.strategy)
            if factor is None or ev.bound is None or not factor.le_div(ev.bound, ev.theta):
                problems.append(
                    f"{where} doc {ev.doc_id}: document prune bound {ev.bound} "
                    f"violates rule at theta={ev.theta}"
                )
        else:
            problems.append(f"{where}: unknown event kind {ev.kind!r}")
    if report.strategy == "asc":
        a, b = mu.num, mu.den
        c, d = eta.num, eta.den
        for v in report.visit_events:
            if a * v.max_sbound <= b * v.theta:
                lhs = v.n * a * c * v.max_sbound - a * c * v.avg_sbound_num
                rhs = v.n * v.theta * (b * c - a * d)
                if not lhs < rhs:
                    problems.append(
                        f"query {report.query_id} cluster {v.cluster_id}: visited with "
                        f"max_sbound {v.max_sbound} <= theta/mu but bound gap is not "
                        f"below the (1/mu - 1/eta) * theta band (theta={v.theta})"
                    )
    return problems


def write_trace(fh: TextIO, reports: Iterable[SearchReport]) -> None:
    """Dump traversal traces as JSON lines, one query block at a time.

    Each block starts with a "query" line carrying the parameters needed
    to re-audit the events that follow it. Timing is deliberately left
    out so traces of the same run are byte-identical.
    """
    for rep in reports:
        meta = {
            "type": "query",
            "query_id": rep.query_id,
            "strategy": rep.strategy,
            "k": rep.params.k if rep.params else None,
            "mu": str(rep.params.mu) if rep.params else None,
            "eta": str(rep.params.eta) if rep.params else None,
            "budget_ms": rep.params.time_budget_ms if rep.params else None,
            "clusters_total": rep.clusters_total,
            "clusters_visited": rep.clusters_visited,
            "docs_scored": rep.docs_scored,
            "terminated_by_budget": rep.terminated_by_budget,
        }
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        for ev in rep.prune_events:
            line: dict = {"theta": ev.theta, "cluster_id": ev.cluster_id}
            if ev.kind == "cluster":
                line["type"] = "cluster-prune"
                line["bound_sum"] = ev.bound_sum
                line["max_sbound"] = ev.max_sbound
                line["avg_num"] = ev.avg_sbound_num
                line["n"] = ev.n
            else:
                line["type"] = "doc-prune"
                line["doc_id"] = ev.doc_id
                line["bound"] = ev.bound
            fh.write(json.dumps(line, sort_keys=True) + "\n")
        for v in rep.visit_events:
            fh.write(
                json.dumps(
                    {
                        "type": "visit",
                        "theta": v.theta,
                        "cluster_id": v.cluster_id,
                        "bound_sum": v.bound_sum,
                        "max_sbound": v.max_sbound,
                        "avg_num": v.avg_sbound_num,
                        "n": v.n,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_trace(path: str) -> list[SearchReport]:
    """Rebuild auditable reports from a trace file (results stay empty)."""
    reports: list[SearchReport] = []
    current: SearchReport | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                line = json.loads(raw)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{ln}: bad JSON: {e}") from e
            kind = line.get("type")
            if kind == "query":
                params = None
                if line.get("k") is not None:
                    params = PruneParams(
                        k=line["k"],
                        mu=Rational.parse(line["mu"]),
                        eta=Rational.parse(line["eta"]),
                        time_budget_ms=line.get("budget_ms"),
                    )
                current = SearchReport(
                    query_id=line["query_id"],
                    strategy=line["strategy"],
                    results=[],
                    params=params,
                    clusters_total=line.get("clusters_total", 0),
                    clusters_visited=line.get("clusters_visited", 0),
                    docs_scored=line.get("docs_scored", 0),
                    terminated_by_budget=line.get("terminated_by_budget", False),
                )
                reports.append(current)
                continue
            if current is None:
                raise DataError(f"{path}:{ln}: event line before any query line")
            try:
                if kind == "cluster-prune":
                    current.prune_events.append(
                        PruneEvent(
                            kind="cluster",
                            theta=line["theta"],
                            cluster_id=line["cluster_id"],
                            bound_sum=line["bound_sum"],
                            max_sbound=line["max_sbound"],
                            avg_sbound_num=line["avg_num"],
                            n=line["n"],
                        )
                    )
                elif kind == "doc-prune":
                    current.prune_events.append(
                        PruneEvent(
                            kind="document",
                            theta=line["theta"],
                            cluster_id=line["cluster_id"],
                            doc_id=line["doc_id"],
                            bound=line["bound"],
                        )
                    )
                elif kind == "visit":
                    current.visit_events.append(
                        ClusterVisit(
                            cluster_id=line["cluster_id"],
                            theta=line["theta"],
                            bound_sum=line["bound_sum"],
                            max_sbound=line["max_sbound"],
                            avg_sbound_num=line["avg_num"],
                            n=line["n"],
                        )
                    )
                else:
                    raise DataError(f"{path}:{ln}: unknown line type {kind!r}")
            except KeyError as e:
                raise DataError(f"{path}:{ln}: missing field {e}") from e
    return reports
