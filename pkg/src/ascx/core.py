"""Core scoring types.

Everything downstream of ingestion works on unsigned integer term weights,
so scores, thresholds, and bounds are exact. Approximation factors are
rationals compared by cross-multiplication; no floats enter any pruning
decision.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence


class DataError(Exception):
    """Malformed input data (corpus, index file, run file, qrels)."""


@dataclass(frozen=True, slots=True)
class SparseVector:
    """Sparse term-weight vector with sorted, strictly positive entries.

    entries: tuple of (term_id, weight) pairs, strictly increasing term_id,
    weight an int >= 1. Zero-weight entries are dropped at construction.
    """

    entries: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        prev = -1
        for term, weight in self.entries:
            if not isinstance(term, int) or not isinstance(weight, int):
                raise DataError(f"non-integer entry ({term!r}, {weight!r})")
            if term <= prev:
                raise DataError(f"term ids not strictly increasing at {term}")
            if term >= 2**32:
                raise DataError(f"term id {term} out of u32 range")
            if weight <= 0:
                raise DataError(f"weight {weight} for term {term} must be positive")
            prev = term

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]]) -> "SparseVector":
        """Build from unsorted (term_id, weight) pairs, dropping zero weights."""
        kept = [(int(t), int(w)) for t, w in pairs if w != 0]
        kept.sort()
        return cls(tuple(kept))

    @classmethod
    def from_dict(cls, weights: Mapping[int, int]) -> "SparseVector":
        return cls.from_pairs(weights.items())

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(self.entries)

    @property
    def term_ids(self) -> tuple[int, ...]:
        return tuple(t for t, _ in self.entries)

    def weight(self, term_id: int) -> int:
        """Weight for term_id, 0 if absent."""
        lo, hi = 0, len(self.entries)
        while lo < hi:
            mid = (lo + hi) // 2
            if self.entries[mid][0] < term_id:
                lo = mid + 1
            else:
                hi = mid
        if lo < len(self.entries) and self.entries[lo][0] == term_id:
            return self.entries[lo][1]
        return 0


@dataclass(frozen=True, slots=True)
class Query:
    """A scoring query: integer term weights, e.g. term multiplicities.

    A query whose vector filtered down to nothing is degenerate; searches
    answer it with an empty result list rather than an error.
    """

    query_id: str
    vector: SparseVector

    @classmethod
    def from_term_ids(cls, query_id: str, term_ids: Iterable[int]) -> "Query":
        """Weight each distinct term by its multiplicity in term_ids."""
        counts: dict[int, int] = {}
        for t in term_ids:
            counts[t] = counts.get(t, 0) + 1
        return cls(query_id, SparseVector.from_pairs(counts.items()))

    @property
    def degenerate(self) -> bool:
        return len(self.vector) == 0


def rank_score(doc: SparseVector, query: Query) -> int:
    """Exact dot product of query and document weights over shared terms."""
    score = 0
    d, q = doc.entries, query.vector.entries
    i = j = 0
    while i < len(d) and j < len(q):
        dt, qt = d[i][0], q[j][0]
        if dt == qt:
            score += d[i][1] * q[j][1]
            i += 1
            j += 1
        elif dt < qt:
            i += 1
        else:
            j += 1
    return score


@dataclass(frozen=True, slots=True)
class Rational:
    """Exact fraction in (0, 1] used as an approximation factor.

    The tests "value <= theta / r" are evaluated as num*value <= den*theta,
    keeping all pruning arithmetic in integers.
    """

    num: int
    den: int

    def __post_init__(self) -> None:
        if self.den <= 0 or self.num <= 0:
            raise ValueError(f"rational {self.num}/{self.den} must be positive")
        if self.num > self.den:
            raise ValueError(f"rational {self.num}/{self.den} exceeds 1")

    @classmethod
    def parse(cls, text: str, max_den: int = 1000) -> "Rational":
        """Parse 'p/q' or a decimal ('0.9' -> 9/10, denominator <= max_den)."""
        text = text.strip()
        if "/" in text:
            p, _, q = text.partition("/")
            try:
                return cls(int(p), int(q))
            except ValueError as e:
                raise ValueError(f"bad rational {text!r}: {e}") from e
        try:
            value = float(text)
        except ValueError as e:
            raise ValueError(f"bad rational {text!r}") from e
        if not 0.0 < value <= 1.0:
            raise ValueError(f"rational {text!r} outside (0, 1]")
        from fractions import Fraction

        frac = Fraction(value).limit_denominator(max_den)
        return cls(frac.numerator, frac.denominator)

    def le_div(self, value: int, theta: int) -> bool:
        """True iff value <= theta / self, exactly."""
        return self.num * value <= self.den * theta

    def le(self, other: "Rational") -> bool:
        return self.num * other.den <= other.num * self.den

    def __float__(self) -> float:
        return self.num / self.den

    def __str__(self) -> str:
        return f"{self.num}/{self.den}"


RATIONAL_ONE = Rational(1, 1)


@dataclass(frozen=True, slots=True)
class PruneParams:
    """Pruning configuration. Requires 0 < mu <= eta <= 1."""

    k: int
    mu: Rational = RATIONAL_ONE
    eta: Rational = RATIONAL_ONE
    time_budget_ms: float | None = None

    def __post_init__(self) -> None:
        if self.k <= 0:
            raise ValueError(f"k must be positive, got {self.k}")
        if not self.mu.le(self.eta):
            raise ValueError(f"mu={self.mu} must not exceed eta={self.eta}")
        if self.time_budget_ms is not None and self.time_budget_ms <= 0:
            raise ValueError("time budget must be positive")


@dataclass(frozen=True, slots=True)
class ScoredDoc:
    doc_id: int
    score: int


def topk_compare(a: ScoredDoc, b: ScoredDoc) -> int:
    """Total order for rankings: higher score first, then lower doc_id.

    Returns -1 if a precedes b, 1 if b precedes a, 0 only when identical.
    """
    if a.score != b.score:
        return -1 if a.score > b.score else 1
    if a.doc_id != b.doc_id:
        return -1 if a.doc_id < b.doc_id else 1
    return 0


def ranking_key(d: ScoredDoc) -> tuple[int, int]:
    """Sort key realizing topk_compare order."""
    return (-d.score, d.doc_id)


class TopKAccumulator:
    """Bounded top-k heap exposing the running pruning threshold.

    threshold is 0 until k candidates are held, then the k-th best score.
    It never decreases. Replacement follows topk_compare, so the final
    ranking is independent of offer order.
    """

    __slots__ = ("k", "_heap")

    def __init__(self, k: int) -> None:
        if k <= 0:
            raise ValueError(f"k must be positive, got {k}")
        self.k = k
        # min-heap on (score, -doc_id): root is the current worst entry
        self._heap: list[tuple[int, int]] = []

    def __len__(self) -> int:
        return len(self._heap)

    @property
    def threshold(self) -> int:
        if len(self._heap) < self.k:
            return 0
        return self._heap[0][0]

    def offer(self, doc_id: int, score: int) -> bool:
        """Submit a candidate; returns True if it entered the top-k."""
        if len(self._heap) < self.k:
            heapq.heappush(self._heap, (score, -doc_id))
            return True
        root_score, neg_root_id = self._heap[0]
        if (score, -doc_id) > (root_score, neg_root_id):
            heapq.heapreplace(self._heap, (score, -doc_id))
            return True
        return False

    def results(self) -> list[ScoredDoc]:
        """Contents in final ranked order."""
        docs = [ScoredDoc(-neg_id, score) for score, neg_id in self._heap]
        docs.sort(key=ranking_key)
        return docs


def sweep_ks(k: int, dense_upto: int = 100, log_points: int = 12) -> list[int]:
    """Cutoffs k' <= k for quality curves: every rank up to dense_upto,
    then log-spaced up to k."""
    if k <= dense_upto:
        return list(range(1, k + 1))
    ks = set(range(1, dense_upto + 1))
    for i in range(log_points + 1):
        ks.add(round(math.exp(math.log(dense_upto) + (math.log(k) - math.log(dense_upto)) * i / log_points)))
    ks.add(k)
    return sorted(x for x in ks if 1 <= x <= k)
