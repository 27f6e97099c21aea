"""Behavioral contract of the whole package, one check per numbered test.

Covers: the golden four-cluster bound fixture, exact rank-safety of the
safe strategies, bound-domination and approximation-floor guarantees,
trace audits, segmentation trends, serialization integrity, and time
budget semantics. Each test prints a single summary line on success
(visible with -s); tolerances are stated inline.
"""

import random
import time

import numpy as np
import pytest

from ascx.cli import main as cli_main
from ascx.clustering import random_uniform_segments
from ascx.core import DataError, PruneParams, Query, Rational, sweep_ks
from ascx.evaluation import analyze_bounds, recall_at_k, reports_to_run
from ascx.index import build_index, cluster_bounds
from ascx.retrieval import (
    audit_report,
    read_trace,
    search_anytime,
    search_anytime_star,
    search_asc,
    search_exhaustive,
    search_maxscore,
    should_prune_cluster,
)
from ascx.storage import (
    deserialize_index,
    serialize_index,
    write_index,
    write_queries_jsonl,
)

from helpers import (
    build_small_index,
    index_fields_equal,
    make_integer_corpus,
    random_partition,
    random_segmentation,
)

ONE = Rational.parse("1/1")
HALF = Rational.parse("1/2")


def _report(n, label, detail=""):
    suffix = f" - {detail}" if detail else ""
    print(f"criterion {n:>2} ({label}): PASS{suffix}")


def _prefix_sums(scored, upto):
    """sums[j] = total score of the top j results, zero-padded past the end."""
    sums = [0]
    for s in scored[:upto]:
        sums.append(sums[-1] + s.score)
    while len(sums) <= upto:
        sums.append(sums[-1])
    return sums


# --- 1. golden four-cluster fixture ----------------------------------------

def test_criterion_01_golden_bound_fixture():
    started = time.perf_counter()
    # two docs per cluster, one per segment; weights are scale-10 integers
    docs = [
        (0, {0: 15.0, 1: 16.0}),
        (1, {0: 13.0, 1: 14.0, 2: 2.0}),
        (2, {0: 50.0, 1: 46.0}),
        (3, {0: 50.0, 1: 36.0, 2: 2.0}),
        (4, {0: 97.0}),
        (5, {0: 15.0, 1: 30.0, 2: 10.0}),
        (6, {0: 136.0}),
        (7, {0: 85.0, 1: 20.0, 2: 7.0}),
    ]
    from ascx.clustering import ClusterAssignment, SegmentAssignment

    clusters = ClusterAssignment.from_labels(list(range(8)), [i // 2 for i in range(8)], 4)
    segments = SegmentAssignment(2, {i: i % 2 for i in range(8)}, "random")
    index = build_index(docs, clusters, segments, quant_bits=8, quant_scale=1.0)
    query = Query.from_term_ids("g", [0, 1, 2])
    bounds = [cluster_bounds(index, query, cid) for cid in range(4)]

    assert [b.bound_sum for b in bounds] == [33, 98, 137, 163]
    assert [b.max_sbound for b in bounds] == [31, 96, 97, 136]
    assert [b.avg_sbound_num // b.n for b in bounds] == [30, 92, 76, 124]
    assert all(b.avg_sbound_num % b.n == 0 for b in bounds)

    theta = 90
    anytime_pruned = {b.cluster_id for b in bounds if b.bound_sum <= theta}
    assert anytime_pruned == {0}

    mu9 = Rational.parse("9/10")
    star_pruned = {b.cluster_id for b in bounds if mu9.le_div(b.bound_sum, theta)}
    assert star_pruned == {0, 1}

    asc_params = PruneParams(k=1, mu=mu9, eta=ONE)
    asc_pruned = {
        b.cluster_id for b in bounds if should_prune_cluster(b, theta, asc_params)
    }
    assert asc_pruned == {0, 2}

    elapsed = time.perf_counter() - started
    assert elapsed < 1.0
    _report(1, "golden bound fixture", f"prune sets exact at theta=90, {elapsed * 1000:.0f} ms")


# --- 2. rank-safe equivalence ----------------------------------------------

def test_criterion_02_rank_safe_strategies_match_exact_search(desk):
    started = time.perf_counter()
    safe_params = lambda k: PruneParams(k=k)
    runners = {
        "maxscore": lambda q, k: search_maxscore(desk.index, q, k),
        "anytime": lambda q, k: search_anytime(desk.index, q, safe_params(k)),
        "asc(1,1)": lambda q, k: search_asc(desk.index, q, safe_params(k)),
    }
    checked = 0
    for k in (10, 1000):
        for q in desk.queries:
            oracle = desk.oracle[q.query_id].results
            want = oracle[:k]
            boundary_distinct = len(oracle) <= k or oracle[k - 1].score > oracle[k].score
            for name, run in runners.items():
                got = run(q, k).results
                assert [s.score for s in got] == [s.score for s in want], (name, q.query_id, k)
                if boundary_distinct:
                    assert [s.doc_id for s in got] == [s.doc_id for s in want], (
                        name, q.query_id, k,
                    )
                checked += 1
    elapsed = time.perf_counter() - started
    assert elapsed < 120.0
    _report(2, "rank-safe equivalence", f"{checked} runs match exactly in {elapsed:.1f} s")


# --- 3. bound domination, every (query, cluster) pair ----------------------

def test_criterion_03_bounds_dominate_every_cluster_maximum(desk):
    analysis, rows = analyze_bounds(desk.index, desk.queries)
    by_key = {(r.query_id, r.cluster_id): r for r in rows}
    for r in rows:
        assert r.bound_sum >= r.max_sbound >= r.actual >= 0, r
    # independent recomputation of the true per-cluster maxima
    checked = 0
    for q in desk.queries:
        full = search_exhaustive(desk.index, q, desk.index.doc_count).results
        best: dict[int, int] = {}
        for s in full:
            cid = desk.clusters.doc_to_cluster[s.doc_id]
            if s.score > best.get(cid, 0):
                best[cid] = s.score
        for cid, actual in best.items():
            row = by_key[(q.query_id, cid)]  # positive score forces a positive bound
            assert row.actual == actual
            assert row.max_sbound >= actual
            checked += 1
    _report(3, "bound domination", f"{len(rows)} pairs, {checked} positive maxima, 0 violations")


# --- 4. mu approximation floor, exact arithmetic ----------------------------

def test_criterion_04_top_k_quality_floor_under_mu(desk):
    oracle_sums = {
        qid: _prefix_sums(rep.results, 100) for qid, rep in desk.oracle.items()
    }
    checked = 0
    for mu_text in ("3/10", "1/2", "7/10", "9/10"):
        mu = Rational.parse(mu_text)
        params = PruneParams(k=100, mu=mu, eta=ONE)
        star_params = PruneParams(k=100, mu=mu, eta=mu)
        for q in desk.queries:
            orc = oracle_sums[q.query_id]
            for name, rep in (
                ("asc", search_asc(desk.index, q, params)),
                ("anytime-star", search_anytime_star(desk.index, q, star_params)),
            ):
                got = _prefix_sums(rep.results, 100)
                for j in range(1, 101):
                    assert mu.den * got[j] >= mu.num * orc[j], (
                        name, mu_text, q.query_id, j,
                    )
                checked += 100
    _report(4, "quality floor", f"{checked} (query, cutoff) floor checks, 0 violations")


# --- 5. traced prune events all satisfy their rules (through the CLI) ------

@pytest.fixture(scope="module")
def traced(desk, tmp_path_factory):
    root = tmp_path_factory.mktemp("traces")
    index_path = str(root / "desk.ascx")
    queries_path = str(root / "queries.jsonl")
    write_index(desk.index, index_path)
    write_queries_jsonl(queries_path, desk.queries)
    runs = {
        "asc": ["--strategy", "asc", "--mu", "1/2", "--eta", "3/4"],
        "anytime-star": ["--strategy", "anytime-star", "--mu", "7/10"],
        "anytime": ["--strategy", "anytime"],
    }
    traces = {}
    for name, flags in runs.items():
        trace_path = str(root / f"{name}.trace")
        code = cli_main(
            ["search", "--index", index_path, "--queries", queries_path,
             "--k", "100", "--trace", trace_path] + flags
        )
        assert code == 0
        traces[name] = read_trace(trace_path)
    return traces


def test_criterion_05_all_traced_prune_events_satisfy_rules(traced):
    cluster_events = doc_events = 0
    for name, reports in traced.items():
        assert len(reports) == 200
        for rep in reports:
            problems = audit_report(rep)
            assert problems == [], (name, rep.query_id, problems[:3])
            kinds = [ev.kind for ev in rep.prune_events]
            cluster_events += kinds.count("cluster")
            doc_events += kinds.count("document")
    assert cluster_events > 0 and doc_events > 0
    _report(5, "prune-event audit", f"{cluster_events} cluster + {doc_events} doc events clean")


# --- 6. gap band for visited clusters whose max bound cleared theta/mu ------

def _kept_with_low_max(reports):
    """Visit events where mu * max_sbound <= theta, with their parameters."""
    out = []
    for rep in reports:
        mu, eta = rep.params.mu, rep.params.eta
        for v in rep.visit_events:
            if mu.num * v.max_sbound <= mu.den * v.theta:
                out.append((mu, eta, v))
    return out


def test_criterion_06_kept_cluster_gap_stays_below_band(traced):
    kept = _kept_with_low_max(traced["asc"])
    assert kept, "no surviving cluster ever cleared theta/mu; check is vacuous"
    for mu, eta, v in kept:
        a, b = mu.num, mu.den
        c, d = eta.num, eta.den
        # gap < (1/mu - 1/eta) * theta, cross-multiplied exact
        lhs = v.n * a * c * v.max_sbound - a * c * v.avg_sbound_num
        rhs = v.n * v.theta * (b * c - a * d)
        assert lhs < rhs, v
    _report(6, "kept-cluster gap band", f"{len(kept)} kept clusters all inside the band")


@pytest.mark.xfail(
    reason="arithmetically unattainable: surviving the average check while the "
    "max check passed forces the gap strictly under (1/mu - 1/eta) * theta, "
    "never above it",
    strict=True,
)
def test_criterion_06_kept_cluster_gap_above_band_literal(traced):
    kept = _kept_with_low_max(traced["asc"])
    assert kept, "vacuous"
    print(
        "criterion  6 (literal gap direction): asserting gap > band on "
        f"{len(kept)} kept clusters"
    )
    for mu, eta, v in kept:
        a, b = mu.num, mu.den
        c, d = eta.num, eta.den
        lhs = v.n * a * c * v.max_sbound - a * c * v.avg_sbound_num
        rhs = v.n * v.theta * (b * c - a * d)
        assert lhs > rhs, v


# --- 7. single segment collapses the segment-aware walk ---------------------

def test_criterion_07_single_segment_equals_uniform_over_estimation(desk, desk_index_n1):
    compared = 0
    for mu_text in ("1/2", "9/10"):
        mu = Rational.parse(mu_text)
        for q in desk.queries:
            asc = search_asc(desk_index_n1, q, PruneParams(k=100, mu=mu, eta=mu))
            star = search_anytime_star(desk_index_n1, q, PruneParams(k=100, mu=mu, eta=mu))
            assert [(s.doc_id, s.score) for s in asc.results] == [
                (s.doc_id, s.score) for s in star.results
            ], (mu_text, q.query_id)
            compared += 1
    _report(7, "n=1 equivalence", f"{compared} ranked lists identical")


# --- 8. expected quality under random re-segmentation -----------------------

def test_criterion_08_mean_quality_over_random_segmentations(desk):
    ks = sweep_ks(100)
    oracle_sums = np.array(
        [_prefix_sums(desk.oracle[q.query_id].results, 100) for q in desk.queries],
        dtype=np.float64,
    )
    params = PruneParams(k=100, mu=HALF, eta=ONE)
    n_seeds = 50
    acc = np.zeros(len(ks))
    for s in range(n_seeds):
        seg = random_uniform_segments(desk.clusters, 8, seed=10_000 + s)
        index = desk.index.resegment(seg)
        got_sums = np.array(
            [
                _prefix_sums(search_asc(index, q, params).results, 100)
                for q in desk.queries
            ],
            dtype=np.float64,
        )
        for i, kp in enumerate(ks):
            orc = oracle_sums[:, kp]
            got = got_sums[:, kp]
            ratios = np.where(orc > 0, got / np.maximum(orc, 1), 1.0)
            acc[i] += ratios.mean()
    curve = acc / n_seeds
    worst = curve.min()
    assert (curve >= 0.98).all(), f"worst mean ratio {worst:.4f} at k'={ks[int(curve.argmin())]}"
    _report(8, "random segmentation quality", f"{n_seeds} seeds, worst mean ratio {worst:.4f} >= 0.98")


# --- 9. segmentation strategies: uniform spread beats concentration ---------

def test_criterion_09_random_uniform_recall_beats_kmeans_segments(
    desk, desk_index_kmeans_segments
):
    oracle_run = reports_to_run(desk.oracle.values(), desk.index.quant_scale)
    params = PruneParams(k=100, mu=Rational.parse("3/10"), eta=ONE)

    def mean_recall(index):
        reports = [search_asc(index, q, params) for q in desk.queries]
        run = reports_to_run(reports, index.quant_scale)
        mean, _ = recall_at_k(run, oracle_run, 100)
        return mean

    r_random = mean_recall(desk.index)
    r_kmeans = mean_recall(desk_index_kmeans_segments)
    assert r_random >= r_kmeans
    _report(9, "segmentation trend", f"recall@100 random {r_random:.4f} >= kmeans-sub {r_kmeans:.4f}")


# --- 10. efficiency trends ---------------------------------------------------

def test_criterion_10_efficiency_trends(desk, desk_index_m32, desk_index_m512):
    k100 = PruneParams(k=100)
    half = PruneParams(k=100, mu=HALF, eta=ONE)
    visited_half = visited_safe = docs_asc = docs_anytime = 0
    for q in desk.queries:
        visited_half += search_asc(desk.index, q, half).clusters_visited
        safe_rep = search_asc(desk.index, q, k100)
        visited_safe += safe_rep.clusters_visited
        docs_asc += safe_rep.docs_scored
        docs_anytime += search_anytime(desk.index, q, k100).docs_scored
    assert visited_half < visited_safe
    assert docs_asc <= docs_anytime

    tightness = []
    for index in (desk_index_m32, desk.index, desk_index_m512):
        analysis, _ = analyze_bounds(index, desk.queries)
        tightness.append(analysis.mean_actual_over_bound_sum)
    assert tightness[0] < tightness[1] < tightness[2]
    _report(
        10,
        "efficiency trends",
        f"visited {visited_half} < {visited_safe}; docs {docs_asc} <= {docs_anytime}; "
        f"tightness {tightness[0]:.3f} < {tightness[1]:.3f} < {tightness[2]:.3f}",
    )


# --- 11. serialization integrity --------------------------------------------

def test_criterion_11_serialization_roundtrips_and_corruption_detection():
    rounds = 100
    detected = 0
    for i in range(rounds):
        rng = random.Random(5000 + i)
        corpus = make_integer_corpus(
            rng,
            n_docs=rng.randrange(20, 90),
            vocab=rng.randrange(10, 60),
            max_nnz=rng.randrange(2, 10),
            max_weight=rng.randrange(5, 200),
        )
        doc_ids = sorted(corpus)
        m = rng.randrange(1, 7)
        clusters = random_partition(rng, doc_ids, m)
        segments = random_segmentation(rng, doc_ids, rng.randrange(1, 5))
        index = build_index(
            ((d, {t: float(w) for t, w in terms.items()}) for d, terms in corpus.items()),
            clusters,
            segments,
            quant_bits=rng.choice([8, 16]),
            quant_scale=1.0,
        )
        blob = serialize_index(index)
        restored = deserialize_index(blob)
        assert serialize_index(restored) == blob
        assert index_fields_equal(index, restored)
        # single corrupted byte must never pass
        pos = rng.randrange(len(blob))
        flip = rng.randrange(1, 256)
        corrupted = bytearray(blob)
        corrupted[pos] ^= flip
        with pytest.raises(DataError):
            deserialize_index(bytes(corrupted))
        detected += 1
    assert detected == rounds
    _report(11, "serialization", f"{rounds}/{rounds} byte-stable roundtrips, {detected}/{rounds} corruptions caught")


# --- 12. time budget semantics -----------------------------------------------

def test_criterion_12_budget_semantics(desk):
    # k=1000 keeps per-query latency homogeneous (max/mean well under 10x),
    # so a budget of ten mean response times cannot clip the slowest query
    base_params = PruneParams(k=1000, mu=HALF, eta=ONE)
    base = [search_asc(desk.index, q, base_params) for q in desk.queries]
    mrt = sum(r.elapsed_ms for r in base) / len(base)

    generous = PruneParams(k=1000, mu=HALF, eta=ONE, time_budget_ms=10.0 * mrt)
    for q, ref in zip(desk.queries, base):
        rep = search_asc(desk.index, q, generous)
        assert not rep.terminated_by_budget, (q.query_id, rep.elapsed_ms)
        assert [(s.doc_id, s.score) for s in rep.results] == [
            (s.doc_id, s.score) for s in ref.results
        ], q.query_id

    tight = PruneParams(k=1000, mu=HALF, eta=ONE, time_budget_ms=1.0)
    stopped = 0
    for q in desk.queries:
        rep = search_asc(desk.index, q, tight)
        if rep.terminated_by_budget:
            stopped += 1
            # within budget plus one cluster's processing time (plus timer slack)
            assert rep.elapsed_ms <= 1.0 + rep.max_cluster_ms + 1.0, (
                q.query_id, rep.elapsed_ms, rep.max_cluster_ms,
            )
    assert stopped > 0, "budget of 1 ms never fired; queries too fast to exercise it"
    _report(
        12,
        "budget semantics",
        f"10x MRT ({10 * mrt:.1f} ms) exact on all queries; 1 ms stopped {stopped}/200 early",
    )
