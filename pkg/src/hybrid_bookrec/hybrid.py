"""Author expansion, weighted fusion and top-n selection.

The author rank vector is turned into a book rank vector (each author's most
popular books, capped per author), both book vectors are min-max scaled, and
they are blended as ``(alpha * author + (1 - alpha) * book) / 2``.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from hybrid_bookrec.corpus import (
    DEFAULT_PREFERENCE_THRESHOLD,
    Catalog,
    RatingEvent,
    UserProfile,
    build_catalog,
    build_profiles,
    latest_ratings,
)
from hybrid_bookrec.errors import (
    AlphaOutOfRange,
    InvalidLimit,
    InvalidParameter,
    KindMismatch,
    UnknownUser,
    UntrainedEngine,
)
from hybrid_bookrec.predictor import AggregationSpec, RankVector, predict_authors, predict_books
from hybrid_bookrec.similarity import SCHEMES, SimilarityMatrix, build_similarity

_log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.1
DEFAULT_BOOK_LIMIT = 4
DEFAULT_TOP_N = 10


@dataclass(frozen=True)
class FusionSpec:
    alpha: float = DEFAULT_ALPHA
    max_books_per_author: int = DEFAULT_BOOK_LIMIT
    top_n: int = DEFAULT_TOP_N

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise AlphaOutOfRange(f"alpha must lie in [0, 1], got {self.alpha}")
        if int(self.max_books_per_author) != self.max_books_per_author or self.max_books_per_author < 1:
            raise InvalidLimit(f"max_books_per_author must be a positive integer, got {self.max_books_per_author}")
        if int(self.top_n) != self.top_n or self.top_n < 1:
            raise InvalidParameter(f"top_n must be a positive integer, got {self.top_n}")


@dataclass(frozen=True)
class RecommendationList:
    user: int
    entries: tuple[tuple[int, float], ...]

    @property
    def books(self) -> list[int]:
        return [b for b, _ in self.entries]

    def __len__(self):
        return len(self.entries)

    def rows(self, catalog: Catalog) -> list[dict]:
        uid = catalog.users.ids[self.user]
        return [
            {"user_id": uid, "rank": r, "book_id": catalog.books.ids[b], "score": repr(s)}
            for r, (b, s) in enumerate(self.entries, start=1)
        ]

    def to_csv(self, catalog: Catalog, fh=None) -> str:
        """Render as ``user_id,rank,book_id,score``; also written to ``fh`` if given."""
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["user_id", "rank", "book_id", "score"], lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows(catalog))
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def expand_authors(author_rv: RankVector, catalog: Catalog, limit: int = DEFAULT_BOOK_LIMIT) -> RankVector:
    """Spread author scores over each author's ``limit`` most popular books.

    A kept book scores ``author_score * popularity / max_popularity``.
    """
    if author_rv.kind != "author":
        raise KindMismatch(f"expected an author rank vector, got {author_rv.kind}")
    if int(limit) != limit or limit < 1:
        raise InvalidLimit(f"book limit must be a positive integer, got {limit}")
    out = np.zeros(catalog.n_books)
    max_pop = catalog.popularity.max() if catalog.n_books else 0
    if max_pop > 0:
        for a in np.flatnonzero(author_rv.scores > 0):
            kept = catalog.author_books[a][:limit]
            out[kept] = author_rv.scores[a] * catalog.popularity[kept] / max_pop
    return RankVector("book", out, "expanded")


def normalize_rv(rv: RankVector) -> RankVector:
    """Min-max scale the nonzero entries to [0, 1]; a flat vector maps to 1."""
    scores = np.array(rv.scores, dtype=np.float64)
    nz = scores != 0
    if nz.any():
        lo, hi = scores[nz].min(), scores[nz].max()
        scores[nz] = 1.0 if hi == lo else (scores[nz] - lo) / (hi - lo)
    return RankVector(rv.kind, scores, rv.provenance)


def wam_fuse(author_books: RankVector, icf_books: RankVector, alpha: float) -> RankVector:
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha must lie in [0, 1], got {alpha}")
    if author_books.kind != "book" or icf_books.kind != "book":
        raise KindMismatch("weighted fusion combines two book rank vectors")
    fused = (alpha * author_books.scores + (1.0 - alpha) * icf_books.scores) / 2.0
    return RankVector("book", fused, "fused")


def top_n(fused: RankVector, profile: UserProfile, spec: FusionSpec) -> RecommendationList:
    """Best positive-scoring books the user has not rated in training."""
    if fused.kind != "book":
        raise KindMismatch(f"top-n selection needs a book rank vector, got {fused.kind}")
    scores = fused.scores
    candidates = np.flatnonzero(scores > 0)
    if profile.book_ratings:
        candidates = candidates[~np.isin(candidates, list(profile.book_ratings))]
    ranked = candidates[np.lexsort((candidates, -scores[candidates]))][: spec.top_n]
    return RecommendationList(profile.user, tuple((int(b), float(scores[b])) for b in ranked))


def fuse_predictions(book_rv: RankVector, author_rv: RankVector, catalog: Catalog, profile: UserProfile,
                     spec: FusionSpec) -> RecommendationList:
    """Everything after prediction: expand, normalize, fuse, select."""
    expanded = normalize_rv(expand_authors(author_rv, catalog, spec.max_books_per_author))
    fused = wam_fuse(expanded, normalize_rv(book_rv), spec.alpha)
    return top_n(fused, profile, spec)


class HybridEngine:
    """Trained state: catalog, user profiles and the book and author similarity matrices."""

    def __init__(self, scheme: str = "cooc", preference_threshold: int = DEFAULT_PREFERENCE_THRESHOLD):
        if scheme not in SCHEMES:
            raise InvalidParameter(f"unknown similarity scheme {scheme!r}; expected one of {SCHEMES}")
        if not 1 <= preference_threshold <= 5:
            raise InvalidParameter(f"preference threshold must lie in 1..5, got {preference_threshold}")
        self.scheme = scheme
        self.preference_threshold = preference_threshold
        self.catalog: Catalog | None = None
        self.profiles: list[UserProfile] | None = None
        self.book_sim: SimilarityMatrix | None = None
        self.author_sim: SimilarityMatrix | None = None

    def fit(self, train: Sequence[RatingEvent], matrices: tuple[SimilarityMatrix, SimilarityMatrix] | None = None):
        """Build catalog, profiles and matrices from ``train``.

        Pass ``matrices=(book_sim, author_sim)`` to reuse previously built ones.
        """
        catalog = build_catalog(train)
        table = latest_ratings(train, catalog)
        self.catalog = catalog
        self.profiles = build_profiles(table, catalog, self.preference_threshold)
        if matrices is None:
            _log.info("building %s matrices over %d books, %d authors",
                      self.scheme, catalog.n_books, catalog.n_authors)
            matrices = tuple(
                build_similarity(train, catalog, kind, self.scheme, self.preference_threshold, table)
                for kind in ("book", "author")
            )
        self.book_sim, self.author_sim = matrices
        if self.book_sim.n_items != catalog.n_books or self.author_sim.n_items != catalog.n_authors:
            raise KindMismatch("supplied matrices do not match the training catalog")
        return self

    @property
    def trained(self) -> bool:
        return self.book_sim is not None and self.author_sim is not None

    def _require_trained(self):
        if not self.trained:
            raise UntrainedEngine("engine has not been fitted")

    def user_index(self, user_id: str) -> int:
        self._require_trained()
        idx = self.catalog.users.get(user_id)
        if idx is None:
            raise UnknownUser(f"user {user_id!r} has no training ratings")
        return idx

    def profile(self, user: int) -> UserProfile:
        self._require_trained()
        if not 0 <= user < self.catalog.n_users:
            raise UnknownUser(f"user index {user} not in catalog")
        return self.profiles[user]

    def predict_books(self, user: int, agg: AggregationSpec) -> RankVector:
        return predict_books(self.book_sim, self.profile(user), agg)

    def predict_authors(self, user: int, agg: AggregationSpec) -> RankVector:
        return predict_authors(self.author_sim, self.profile(user), agg)

    def recommend(self, user: int, spec: FusionSpec = FusionSpec(),
                  agg_author: AggregationSpec = AggregationSpec("cfpa"),
                  agg_book: AggregationSpec = AggregationSpec("rrf")) -> RecommendationList:
        return recommend(user, self, spec, agg_author, agg_book)


def recommend(user: int, engine: HybridEngine, spec: FusionSpec = FusionSpec(),
              agg_author: AggregationSpec = AggregationSpec("cfpa"),
              agg_book: AggregationSpec = AggregationSpec("rrf")) -> RecommendationList:
    """Full pipeline for one user index on a fitted engine."""
    if not isinstance(engine, HybridEngine) or not engine.trained:
        raise UntrainedEngine("recommend needs a fitted HybridEngine")
    profile = engine.profile(user)
    book_rv = engine.predict_books(user, agg_book)
    author_rv = engine.predict_authors(user, agg_author)
    return fuse_predictions(book_rv, author_rv, engine.catalog, profile, spec)
