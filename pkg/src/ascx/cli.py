"""Command-line front end: reproducible generate/cluster/index/search/eval
pipelines over the cluster-skipping index.

Exit codes: 0 success, 1 usage error, 2 data or I/O error. Flags may be
preloaded from a flat key=value config file via --config; explicit flags
win over config entries. ASCX_LOG selects the log level.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ascx.clustering import (
    SEGMENT_METHODS,
    ClusterAssignment,
    kmeans,
    kmeans_subclusters,
    random_projection,
    random_uniform_segments,
    read_assignments_tsv,
    write_assignments_tsv,
)
from ascx.core import RATIONAL_ONE, DataError, PruneParams, Rational
from ascx.evaluation import (
    analyze_bounds,
    gen_corpus,
    latency_stats,
    mrr_at_k,
    read_qrels,
    read_run_trec,
    recall_at_k,
    reports_to_run,
    score_ratio_curve,
    write_bounds_csv,
    write_qrels,
    write_run_trec,
    SyntheticCorpusSpec,
)
from ascx.index import build_index
from ascx.retrieval import STRATEGIES, run_strategy, write_trace
from ascx.storage import (
    read_corpus_jsonl,
    read_index,
    read_queries_jsonl,
    write_corpus_jsonl,
    write_index,
    write_queries_jsonl,
)
from ascx.core import sweep_ks

log = logging.getLogger("ascx.cli")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; the contract here is 1
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _setup_logging() -> None:
    name = os.environ.get("ASCX_LOG", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _expand_config(argv: list[str]) -> list[str]:
    """Splice config-file entries into argv as flags.

    The file is flat `key = value` lines (# comments allowed). Each key
    maps to --key; entries already present on the command line are
    skipped, so explicit flags always win. Value "true" injects a bare
    switch, "false" drops it.
    """
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        raise UsageError("--config needs a file path")
    path = argv[i + 1]
    rest = argv[:i] + argv[i + 2 :]
    if not rest:
        raise UsageError("--config requires a subcommand")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as e:
        raise DataError(f"cannot read config {path}: {e}") from e
    injected: list[str] = []
    for ln, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DataError(f"{path}:{ln}: expected key=value")
        flag = "--" + key.strip().replace("_", "-")
        value = value.strip().strip("\"'")
        if flag in rest:
            continue
        if value.lower() == "true":
            injected.append(flag)
        elif value.lower() == "false":
            continue
        else:
            injected.extend([flag, value])
    return [rest[0]] + injected + rest[1:]


def _rational(text: str) -> Rational:
    try:
        return Rational.parse(text)
    except DataError as e:
        raise UsageError(str(e)) from e


def _corpus_base(out: str) -> str:
    return out[: -len(".jsonl")] if out.endswith(".jsonl") else out


def _cmd_gen_corpus(args: argparse.Namespace) -> int:
    spec = SyntheticCorpusSpec(
        docs=args.docs,
        vocab=args.vocab,
        topics=args.topics,
        mean_nnz=args.mean_nnz,
        n_queries=args.queries,
        query_len=args.query_len,
        dims=args.dims,
        noise=args.noise,
        zipf=args.zipf,
        topic_share=args.topic_share,
        seed=args.seed,
    )
    corpus = gen_corpus(spec)
    base = _corpus_base(args.out)
    write_corpus_jsonl(base + ".jsonl", corpus.docs)
    np.save(base + ".dense.npy", corpus.dense)
    write_queries_jsonl(base + ".queries.jsonl", corpus.queries)
    write_qrels(base + ".qrels.txt", corpus.qrels)
    print(
        f"wrote {len(corpus.docs)} docs, {len(corpus.queries)} queries "
        f"({base}.jsonl, .dense.npy, .queries.jsonl, .qrels.txt)"
    )
    return 0


def _load_points(args: argparse.Namespace, docs) -> np.ndarray:
    if getattr(args, "dense", None):
        points = np.load(args.dense)
        if points.ndim != 2 or len(points) != len(docs):
            raise DataError(
                f"dense matrix {args.dense} has shape {points.shape}, "
                f"expected ({len(docs)}, dims)"
            )
        return np.asarray(points, dtype=np.float64)
    log.info("no dense vectors given; projecting sparse docs to %d dims", args.proj_dims)
    return random_projection([t for _, t in docs], args.proj_dims, seed=args.seed)


def _cluster_and_segment(args: argparse.Namespace, docs):
    doc_ids = [d for d, _ in docs]
    points = _load_points(args, docs)
    labels, _ = kmeans(points, args.clusters, seed=args.seed, max_iters=args.max_iters)
    assignment = ClusterAssignment.from_labels(doc_ids, labels.tolist(), args.clusters)
    if args.seg_method == "random":
        segments = random_uniform_segments(assignment, args.segments, seed=args.seed)
    else:
        segments = kmeans_subclusters(
            points, doc_ids, assignment, args.segments, seed=args.seed
        )
    return assignment, segments


def _cmd_cluster(args: argparse.Namespace) -> int:
    docs = read_corpus_jsonl(args.corpus)
    assignment, segments = _cluster_and_segment(args, docs)
    write_assignments_tsv(args.out, assignment, segments)
    sizes = [len(m) for m in assignment.members]
    print(
        f"clustered {len(docs)} docs into {args.clusters} clusters "
        f"(sizes {min(sizes)}..{max(sizes)}), {args.segments} segments each -> {args.out}"
    )
    return 0


def _cmd_build_index(args: argparse.Namespace) -> int:
    docs = read_corpus_jsonl(args.corpus)
    if args.assignments:
        assignment, segments, _, _ = read_assignments_tsv(args.assignments)
    else:
        if args.clusters is None or args.segments is None:
            raise UsageError("need --assignments, or --clusters and --segments")
        assignment, segments = _cluster_and_segment(args, docs)
    index = build_index(
        docs,
        assignment,
        segments,
        quant_bits=args.quant_bits,
        quant_scale=args.quant_scale,
    )
    write_index(index, args.out)
    print(
        f"indexed {index.doc_count} docs, {len(index.lexicon)} terms, "
        f"m={index.m}, n={index.n}, {args.quant_bits}-bit weights -> {args.out}"
    )
    return 0


def _search_params(args: argparse.Namespace) -> PruneParams:
    wants_mu = args.strategy in ("anytime-star", "asc")
    wants_eta = args.strategy == "asc"
    wants_budget = args.strategy in ("anytime", "anytime-star", "asc")
    if args.mu is not None and not wants_mu:
        raise UsageError(f"--mu is not accepted by strategy {args.strategy}")
    if args.eta is not None and not wants_eta:
        raise UsageError(f"--eta is not accepted by strategy {args.strategy}")
    if args.budget_ms is not None and not wants_budget:
        raise UsageError(f"--budget-ms is not accepted by strategy {args.strategy}")
    mu = args.mu if args.mu is not None else RATIONAL_ONE
    eta = args.eta if args.eta is not None else RATIONAL_ONE
    if not mu.le(eta):
        raise UsageError(f"mu ({mu}) must not exceed eta ({eta})")
    try:
        return PruneParams(k=args.k, mu=mu, eta=eta, time_budget_ms=args.budget_ms)
    except (DataError, ValueError) as e:
        raise UsageError(str(e)) from e


def _cmd_search(args: argparse.Namespace) -> int:
    params = _search_params(args)
    index = read_index(args.index)
    queries = read_queries_jsonl(args.queries)
    record = args.trace is not None

    def one(q):
        return run_strategy(index, q, args.strategy, params, record_events=record)

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            reports = list(pool.map(one, queries))
    else:
        reports = [one(q) for q in queries]
    run = reports_to_run(reports, index.quant_scale)
    if args.run:
        write_run_trec(args.run, run, args.tag or args.strategy)
    if args.trace:
        with open(args.trace, "w", encoding="ascii") as fh:
            write_trace(fh, reports)
    lat = latency_stats([r.elapsed_ms for r in reports])
    visited = sum(r.clusters_visited for r in reports)
    total = sum(r.clusters_total for r in reports)
    pct_c = 100.0 * visited / total if total else 100.0
    print(
        f"strategy={args.strategy} k={params.k} queries={len(reports)} "
        f"mean_ms={lat.mean_ms:.2f} p99_ms={lat.p99_ms:.2f} "
        f"clusters_visited={pct_c:.1f}% "
        f"docs_scored={sum(r.docs_scored for r in reports)} "
        f"budget_stops={sum(r.terminated_by_budget for r in reports)}"
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    if not args.oracle_run and not args.qrels:
        raise UsageError("need --oracle-run and/or --qrels")
    run = read_run_trec(args.run)
    rows: list[tuple[str, int, float]] = []
    curves: dict[str, list[tuple[int, float]]] = {}
    if args.oracle_run:
        oracle = read_run_trec(args.oracle_run)
        mean_recall, _ = recall_at_k(run, oracle, args.k)
        rows.append(("recall_vs_exact", args.k, mean_recall))
        curve = score_ratio_curve(run, oracle, sweep_ks(args.k))
        curves["run"] = curve
        rows.extend(("score_ratio", kp, ratio) for kp, ratio in curve)
    if args.qrels:
        qrels = read_qrels(args.qrels)
        mean_recall, _ = recall_at_k(run, qrels, args.k)
        rows.append(("recall_vs_judged", args.k, mean_recall))
        mean_mrr, _ = mrr_at_k(run, qrels, args.k)
        rows.append(("mrr", args.k, mean_mrr))
    with open(args.out, "w", encoding="ascii") as fh:
        fh.write("metric,k,value\n")
        for name, k, value in rows:
            fh.write(f"{name},{k},{value:.6f}\n")
    made = [args.out]
    if curves:
        from ascx.figures import render_ratio_figure

        figure = args.figure or os.path.splitext(args.out)[0] + ".png"
        render_ratio_figure(curves, figure)
        made.append(figure)
    for name, k, value in rows:
        if name != "score_ratio":
            print(f"{name}@{k} = {value:.4f}")
    print("wrote " + ", ".join(made))
    return 0


def _cmd_analyze_bounds(args: argparse.Namespace) -> int:
    index = read_index(args.index)
    queries = read_queries_jsonl(args.queries)
    analysis, rows = analyze_bounds(index, queries)
    write_bounds_csv(args.out, rows)
    from ascx.figures import render_bounds_figure

    figure = args.figure or os.path.splitext(args.out)[0] + ".png"
    render_bounds_figure(rows, figure)
    print(
        f"rows={analysis.rows} "
        f"actual/additive={analysis.mean_actual_over_bound_sum:.4f} "
        f"actual/segmax={analysis.mean_actual_over_max_sbound:.4f} "
        f"gap/actual={analysis.mean_gap_over_actual:.4f} "
        f"avg/max={analysis.mean_avg_over_max:.4f}"
    )
    print(f"wrote {args.out}, {figure}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="ascx", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen-corpus", parents=[], description="synthesize a topical corpus")
    p.add_argument("--docs", type=int, default=50_000)
    p.add_argument("--vocab", type=int, default=5_000)
    p.add_argument("--topics", type=int, default=200)
    p.add_argument("--mean-nnz", type=int, default=40)
    p.add_argument("--queries", type=int, default=200)
    p.add_argument("--query-len", type=int, default=8)
    p.add_argument("--dims", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--zipf", type=float, default=1.1)
    p.add_argument("--topic-share", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True, help="corpus path; siblings derive from it")
    p.set_defaults(func=_cmd_gen_corpus)

    p = sub.add_parser("cluster", description="assign documents to clusters and segments")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dense", help=".npy matrix of dense counterparts, row per doc")
    p.add_argument("--proj-dims", type=int, default=64)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--segments", type=int, required=True)
    p.add_argument("--seg-method", choices=SEGMENT_METHODS, default="random")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("build-index", description="build and serialize an index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--assignments", help="precomputed TSV; skips inline clustering")
    p.add_argument("--dense")
    p.add_argument("--proj-dims", type=int, default=64)
    p.add_argument("--clusters", type=int)
    p.add_argument("--segments", type=int)
    p.add_argument("--seg-method", choices=SEGMENT_METHODS, default="random")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--quant-bits", type=int, default=8)
    p.add_argument("--quant-scale", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_index)

    p = sub.add_parser("search", description="run queries against an index")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--strategy", choices=STRATEGIES, required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--mu", type=_rational)
    p.add_argument("--eta", type=_rational)
    p.add_argument("--budget-ms", type=float)
    p.add_argument("--run", help="TREC run output path")
    p.add_argument("--trace", help="JSON-lines pruning trace output path")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--tag", help="run tag (defaults to the strategy name)")
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("eval", description="score a run against a reference")
    p.add_argument("--run", required=True)
    p.add_argument("--oracle-run", help="exact run to compare against")
    p.add_argument("--qrels")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.add_argument("--figure", help="defaults to the CSV path with .png")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("analyze-bounds", description="audit bound tightness per cluster")
    p.add_argument("--index", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--out", required=True, help="per-(query, cluster) CSV path")
    p.add_argument("--figure", help="defaults to the CSV path with .png")
    p.set_defaults(func=_cmd_analyze_bounds)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    raw = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        expanded = _expand_config(raw)
        args = parser.parse_args(expanded)
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
