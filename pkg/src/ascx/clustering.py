"""Clustering and segmentation of document collections.

Dense document representations are plain float ndarrays, one row per
document. Sparse documents can be brought into dense form with a seeded
signed random projection when no learned representation is available.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ascx.core import DataError

SEGMENT_METHODS = ("random", "kmeans")


@dataclass(frozen=True)
class ClusterAssignment:
    """Partition of documents into m clusters."""

    m: int
    doc_to_cluster: dict[int, int]
    members: tuple[tuple[int, ...], ...]  # cluster_id -> sorted doc_ids

    def __post_init__(self) -> None:
        if self.m < 1:
            raise DataError(f"cluster count {self.m} must be >= 1")
        if len(self.members) != self.m:
            raise DataError("member lists do not match cluster count")

    @classmethod
    def from_labels(cls, doc_ids: Sequence[int], labels: Sequence[int], m: int) -> "ClusterAssignment":
        if len(doc_ids) != len(labels):
            raise DataError("doc_ids and labels differ in length")
        mapping: dict[int, int] = {}
        members: list[list[int]] = [[] for _ in range(m)]
        for doc, lab in zip(doc_ids, labels):
            lab = int(lab)
            if not 0 <= lab < m:
                raise DataError(f"cluster label {lab} out of range for m={m}")
            if doc in mapping:
                raise DataError(f"duplicate doc id {doc} in assignment")
            mapping[int(doc)] = lab
            members[lab].append(int(doc))
        return cls(m, mapping, tuple(tuple(sorted(ms)) for ms in members))


@dataclass(frozen=True)
class SegmentAssignment:
    """Within-cluster partition of documents into n segments."""

    n: int
    doc_to_segment: dict[int, int]
    method: str

    def __post_init__(self) -> None:
        if self.n < 1:
            raise DataError(f"segment count {self.n} must be >= 1")
        if self.method not in SEGMENT_METHODS:
            raise DataError(f"unknown segmentation method {self.method!r}")


def _assign_nearest(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # argmin resolves distance ties to the lowest centroid index
    sq = (points * points).sum(axis=1)[:, None] - 2.0 * points @ centroids.T
    sq += (centroids * centroids).sum(axis=1)[None, :]
    return np.argmin(sq, axis=1)


def _plusplus_init(points: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    n_pts = len(points)
    centers = np.empty((m, points.shape[1]), dtype=points.dtype)
    centers[0] = points[rng.integers(n_pts)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, m):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n_pts, p=d2 / total)
        else:
            idx = rng.integers(n_pts)
        centers[j] = points[idx]
        np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1), out=d2)
    return centers


def _repair_empty(points: np.ndarray, labels: np.ndarray, centroids: np.ndarray, m: int) -> np.ndarray:
    sizes = np.bincount(labels, minlength=m)
    for empty in np.flatnonzero(sizes == 0):
        donor = int(np.argmax(sizes))  # largest cluster, ties to lowest id
        donor_members = np.flatnonzero(labels == donor)
        dist = ((points[donor_members] - centroids[donor]) ** 2).sum(axis=1)
        victim = donor_members[int(np.argmax(dist))]
        labels[victim] = empty
        sizes[donor] -= 1
        sizes[empty] += 1
    return labels


def kmeans(
    points: np.ndarray,
    m: int,
    *,
    seed: int,
    max_iters: int = 50,
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's iterations from a D^2-weighted seeding.

    Returns (labels, centroids). Stops at the assignment fixpoint or after
    max_iters sweeps. Empty clusters are repaired each sweep by stealing
    the farthest point from the largest cluster, so every cluster ends
    non-empty. Deterministic for a given seed.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or len(points) == 0:
        raise DataError("points must be a non-empty 2-d array")
    if not np.all(np.isfinite(points)):
        raise DataError("points contain non-finite values")
    if not 1 <= m <= len(points):
        raise DataError(f"cluster count {m} outside [1, {len(points)}]")
    rng = np.random.default_rng(seed)
    centroids = _plusplus_init(points, m, rng)
    labels: np.ndarray | None = None
    for _ in range(max_iters):
        new_labels = _assign_nearest(points, centroids)
        new_labels = _repair_empty(points, new_labels, centroids, m)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centroids = np.zeros_like(centroids)
        np.add.at(centroids, labels, points)
        centroids /= np.bincount(labels, minlength=m)[:, None]
    assert labels is not None
    return labels, centroids


def random_uniform_segments(assignment: ClusterAssignment, n: int, *, seed: int) -> SegmentAssignment:
    """Shuffle each cluster and deal members round-robin into n segments.

    Segment sizes within a cluster differ by at most one, and across seeds
    each member is equally likely to land in any given slot.
    """
    if n < 1:
        raise DataError(f"segment count {n} must be >= 1")
    doc_to_segment: dict[int, int] = {}
    for cid, members in enumerate(assignment.members):
        rng = np.random.default_rng([seed, cid])
        order = rng.permutation(len(members))
        for pos, idx in enumerate(order):
            doc_to_segment[members[int(idx)]] = pos % n
    return SegmentAssignment(n, doc_to_segment, "random")


def kmeans_subclusters(
    points: np.ndarray,
    doc_ids: Sequence[int],
    assignment: ClusterAssignment,
    n: int,
    *,
    seed: int,
    max_iters: int = 50,
) -> SegmentAssignment:
    """Segment each cluster by k-means over its members' dense rows.

    Clusters smaller than n get one segment per member; segment ids above
    that stay unused for the cluster.
    """
    if n < 1:
        raise DataError(f"segment count {n} must be >= 1")
    points = np.asarray(points, dtype=np.float64)
    row_of = {int(d): i for i, d in enumerate(doc_ids)}
    doc_to_segment: dict[int, int] = {}
    for cid, members in enumerate(assignment.members):
        if not members:
            continue
        missing = [d for d in members if d not in row_of]
        if missing:
            raise DataError(f"no dense row for doc ids {missing[:5]}")
        sub = points[[row_of[d] for d in members]]
        k = min(n, len(members))
        if k == 1:
            labels = np.zeros(len(members), dtype=np.int64)
        else:
            labels, _ = kmeans(sub, k, seed=int(np.random.default_rng([seed, cid]).integers(2**32)), max_iters=max_iters)
        for doc, lab in zip(members, labels):
            doc_to_segment[doc] = int(lab)
    return SegmentAssignment(n, doc_to_segment, "kmeans")


_MIX1 = np.uint64(0x9E3779B97F4A7C15)
_MIX2 = np.uint64(0xBF58476D1CE4E5B9)
_MIX3 = np.uint64(0x94D049BB133111EB)


def _splitmix(x: np.ndarray) -> np.ndarray:
    x = (x + _MIX1) & np.uint64(0xFFFFFFFFFFFFFFFF)
    x = (x ^ (x >> np.uint64(30))) * _MIX2
    x = (x ^ (x >> np.uint64(27))) * _MIX3
    return x ^ (x >> np.uint64(31))


def random_projection(
    docs: Sequence[Mapping[int, float]],
    dims: int,
    *,
    seed: int,
) -> np.ndarray:
    """Signed (+1/-1) projection of sparse documents to dims columns.

    The sign of term t in output column r is a hash of (t, r, seed), so
    the projection is deterministic and needs no stored matrix.
    """
    if dims < 1:
        raise DataError(f"projection dims {dims} must be >= 1")
    doc_idx: list[int] = []
    terms: list[int] = []
    weights: list[float] = []
    for i, doc in enumerate(docs):
        for t, w in doc.items():
            doc_idx.append(i)
            terms.append(int(t))
            weights.append(float(w))
    out = np.zeros((len(docs), dims), dtype=np.float64)
    if not terms:
        return out
    di = np.asarray(doc_idx, dtype=np.int64)
    tv = np.asarray(terms, dtype=np.uint64)
    wv = np.asarray(weights, dtype=np.float64)
    seed_u = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        base = _splitmix(tv * _MIX2 + seed_u * _MIX3)
        for r in range(dims):
            h = _splitmix(base ^ (np.uint64(r) * _MIX1))
            signs = np.where(h & np.uint64(1), 1.0, -1.0)
            out[:, r] = np.bincount(di, weights=signs * wv, minlength=len(docs))
    return out


def write_assignments_tsv(
    path: str,
    cluster: ClusterAssignment,
    segment: SegmentAssignment,
) -> None:
    """doc_id, cluster_id, segment_id as tab-separated rows, by doc_id."""
    with open(path, "w", encoding="ascii") as fh:
        for doc in sorted(cluster.doc_to_cluster):
            seg = segment.doc_to_segment.get(doc)
            if seg is None:
                raise DataError(f"doc {doc} missing from segment assignment")
            fh.write(f"{doc}\t{cluster.doc_to_cluster[doc]}\t{seg}\n")


def read_assignments_tsv(path: str) -> tuple[ClusterAssignment, SegmentAssignment, int, int]:
    """Parse a doc/cluster/segment table; returns (clusters, segments, m, n).

    m and n are inferred as max id + 1.
    """
    doc_ids: list[int] = []
    clabels: list[int] = []
    slabels: list[int] = []
    with open(path, "r", encoding="ascii") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{line_no}: expected 3 columns, got {len(parts)}")
            try:
                doc, c, s = (int(p) for p in parts)
            except ValueError as e:
                raise DataError(f"{path}:{line_no}: non-integer field") from e
            if c < 0 or s < 0 or doc < 0:
                raise DataError(f"{path}:{line_no}: negative id")
            doc_ids.append(doc)
            clabels.append(c)
            slabels.append(s)
    if not doc_ids:
        raise DataError(f"{path}: empty assignment table")
    m = max(clabels) + 1
    n = max(slabels) + 1
    cluster = ClusterAssignment.from_labels(doc_ids, clabels, m)
    segment = SegmentAssignment(n, dict(zip(doc_ids, slabels)), "random")
    return cluster, segment, m, n
