"""Book and author rank vectors for an active user.

The predictor selects the similarity-matrix columns of the user's favorite
items and merges them with reciprocal rank fusion (RRF) or with a
rating-weighted column sum (CFPA).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from hybrid_bookrec.corpus import UserProfile
from hybrid_bookrec.errors import InvalidParameter, KindMismatch, MissingWeight, UnknownItem
from hybrid_bookrec.similarity import SimilarityMatrix

RRF_K = 60.0
AGGREGATIONS = ("rrf", "cfpa")


@dataclass(frozen=True, eq=False)
class RankVector:
    """Dense item -> score vector; an item absent from a prediction scores 0."""

    kind: str
    scores: np.ndarray
    provenance: str

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if not np.all(np.isfinite(scores)):
            raise ValueError("rank vector scores must be finite")
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)

    def __len__(self):
        return len(self.scores)

    def ranking(self) -> np.ndarray:
        """Items with a positive score by (score desc, index asc)."""
        items = np.flatnonzero(self.scores > 0)
        return items[np.lexsort((items, -self.scores[items]))]

    def to_csv(self, path, labels: Sequence[str] | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["item_id", "score"])
            for i in np.flatnonzero(self.scores):
                w.writerow([labels[i] if labels else int(i), repr(float(self.scores[i]))])


@dataclass(frozen=True)
class AggregationSpec:
    function: str = "rrf"
    rrf_k: float = RRF_K

    def __post_init__(self):
        if self.function not in AGGREGATIONS:
            raise InvalidParameter(f"aggregation must be one of {AGGREGATIONS}, got {self.function!r}")
        if not self.rrf_k > 0:
            raise InvalidParameter(f"rrf_k must be positive, got {self.rrf_k}")


def select_columns(sim: SimilarityMatrix, seeds) -> list[tuple[int, np.ndarray]]:
    """One similarity column per seed, ascending seed order, seed entry zeroed."""
    out = []
    for s in sorted(int(s) for s in seeds):
        if not 0 <= s < sim.n_items:
            raise UnknownItem(f"{sim.kind} index {s} outside 0..{sim.n_items - 1}")
        col = sim.column(s)
        col[s] = 0.0
        out.append((s, col))
    return out


def _columns_only(columns) -> list[np.ndarray]:
    return [c[1] if isinstance(c, tuple) else c for c in columns]


def rrf_aggregate(columns, k: float = RRF_K, *, n_items: int | None = None, kind: str = "book",
                  provenance: str = "icfb") -> RankVector:
    """Sum of ``1 / (k + rank)`` over the columns in which an item is retrieved.

    Each column ranks only its strictly positive entries, 1..m, by score
    descending with ties to the lower index. ``columns`` holds arrays or
    ``(seed, array)`` pairs; ``n_items`` sizes the result when it is empty.
    """
    if not k > 0:
        raise InvalidParameter(f"rrf k must be positive, got {k}")
    cols = _columns_only(columns)
    if n_items is None:
        if not cols:
            raise InvalidParameter("n_items is required when there are no columns")
        n_items = len(cols[0])
    total = np.zeros(n_items)
    for col in cols:
        col = np.asarray(col, dtype=np.float64)
        items = np.flatnonzero(col > 0)
        ranked = items[np.lexsort((items, -col[items]))]
        total[ranked] += 1.0 / (k + np.arange(1, len(ranked) + 1))
    return RankVector(kind, total, provenance)


def seed_weight(profile: UserProfile, seed: int, kind: str, author_weight: str = "rating") -> float:
    if kind == "book":
        table = profile.book_ratings
    elif author_weight == "count":
        table = profile.author_pref_count
    else:
        table = profile.author_avg_rating
    if seed not in table:
        raise MissingWeight(f"user {profile.user} has no weight for {kind} {seed}")
    return float(table[seed])


def cfpa_aggregate(columns: Sequence[tuple[int, np.ndarray]], profile: UserProfile, kind: str, *,
                   n_items: int | None = None, author_weight: str = "rating",
                   provenance: str | None = None) -> RankVector:
    """Rating-weighted sum of similarity columns.

    Book seeds are weighted by the user's rating of the book, author seeds by
    the user's mean rating over the author's books (``author_weight="count"``
    switches to the number of preferred books by that author).
    """
    if kind not in ("book", "author"):
        raise KindMismatch(f"unknown kind {kind!r}")
    if n_items is None:
        if not columns:
            raise InvalidParameter("n_items is required when there are no columns")
        n_items = len(columns[0][1])
    total = np.zeros(n_items)
    for seed, col in columns:
        total += seed_weight(profile, seed, kind, author_weight) * np.asarray(col, dtype=np.float64)
    return RankVector(kind, total, provenance or ("icfb" if kind == "book" else "icfa"))


def _predict(sim, seeds, profile, agg, kind, provenance, author_weight="rating") -> RankVector:
    if sim.kind != kind:
        raise KindMismatch(f"expected a {kind} similarity matrix, got {sim.kind}")
    columns = select_columns(sim, seeds)
    if agg.function == "rrf":
        return rrf_aggregate(columns, agg.rrf_k, n_items=sim.n_items, kind=kind, provenance=provenance)
    return cfpa_aggregate(columns, profile, kind, n_items=sim.n_items,
                          author_weight=author_weight, provenance=provenance)


def predict_books(sim: SimilarityMatrix, profile: UserProfile, agg: AggregationSpec) -> RankVector:
    """Book rank vector seeded by the user's preferred books."""
    return _predict(sim, profile.preferred_books, profile, agg, "book", "icfb")


def predict_authors(sim: SimilarityMatrix, profile: UserProfile, agg: AggregationSpec,
                    author_weight: str = "rating") -> RankVector:
    """Author rank vector seeded by every author with at least one preferred book."""
    return _predict(sim, profile.favorite_authors, profile, agg, "author", "icfa", author_weight)
