"""Offline evaluation: mean reciprocal rank on the temporal hold-out, plus sweeps.

Every listed user with at least one test event counts in the denominator;
a list without a relevant book contributes 0.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from hybrid_bookrec.corpus import DEFAULT_PREFERENCE_THRESHOLD, Catalog, RatingEvent, SplitCorpus
from hybrid_bookrec.errors import EmptyTestSet, InvalidParameter, NoEvaluableUsers, RecommenderError
from hybrid_bookrec.hybrid import FusionSpec, HybridEngine, RecommendationList, fuse_predictions
from hybrid_bookrec.predictor import AGGREGATIONS, AggregationSpec, RankVector
from hybrid_bookrec.similarity import SCHEMES

_log = logging.getLogger(__name__)

SIMILARITY_HEADER = ("kind", "scheme", "aggregation", "mrr")
LIMIT_HEADER = ("limit", "aggregation", "mrr")
ALPHA_HEADER = ("alpha", "agg_author", "agg_book", "mrr")
DEFAULT_ALPHAS = tuple(round(0.1 * i, 10) for i in range(11))


@dataclass(frozen=True)
class EvalConfig:
    scheme: str = "cooc"
    agg_author: AggregationSpec = AggregationSpec("cfpa")
    agg_book: AggregationSpec = AggregationSpec("rrf")
    fusion: FusionSpec = FusionSpec()
    preference_threshold: int = DEFAULT_PREFERENCE_THRESHOLD
    relevance_threshold: int = DEFAULT_PREFERENCE_THRESHOLD
    top_n: int | None = None  # overrides fusion.top_n when set

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InvalidParameter(f"unknown similarity scheme {self.scheme!r}")
        for name in ("preference_threshold", "relevance_threshold"):
            if not 1 <= getattr(self, name) <= 5:
                raise InvalidParameter(f"{name} must lie in 1..5")
        if self.top_n is not None:
            object.__setattr__(self, "fusion", replace(self.fusion, top_n=self.top_n))
        object.__setattr__(self, "top_n", self.fusion.top_n)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvalReport:
    mrr: float
    n_users_evaluated: int
    per_user: dict[str, float]
    config: EvalConfig | None = None
    skipped_cold_start: int = 0

    def to_dict(self, per_user: bool = False) -> dict:
        out = {
            "mrr": self.mrr,
            "n_users_evaluated": self.n_users_evaluated,
            "skipped_cold_start": self.skipped_cold_start,
            "config": self.config.to_dict() if self.config is not None else None,
        }
        if per_user:
            out["per_user"] = dict(self.per_user)
        return out


def reciprocal_rank(books: Sequence[int], relevant) -> float:
    for pos, b in enumerate(books, start=1):
        if b in relevant:
            return 1.0 / pos
    return 0.0


def relevant_books(test: Iterable[RatingEvent], catalog: Catalog, relevance_threshold: int) -> dict[int, set[int]]:
    """Per catalog user, the test books rated at or above the threshold.

    Users present in ``test`` get an entry even when none of their books qualify.
    Repeated test ratings of a book resolve to the latest.
    """
    latest: dict[tuple[int, str], tuple] = {}
    for ev in test:
        u = catalog.users.get(ev.user_id)
        if u is None:
            continue
        key = (u, ev.book_id)
        cand = (ev.review_date, ev.rating)
        if key not in latest or cand > latest[key]:
            latest[key] = cand
    out: dict[int, set[int]] = {}
    for (u, book_id), (_, rating) in sorted(latest.items()):
        rel = out.setdefault(u, set())
        b = catalog.books.get(book_id)
        if rating >= relevance_threshold and b is not None:
            rel.add(b)
    return out


def mrr(lists, test: Sequence[RatingEvent], relevance_threshold: int, catalog: Catalog,
        config: EvalConfig | None = None) -> EvalReport:
    """Mean over users of 1/(position of the first relevant book), 0 without a hit.

    ``lists`` is a mapping or sequence of :class:`RecommendationList`.
    """
    if not test:
        raise EmptyTestSet("no test events")
    if isinstance(lists, Mapping):
        lists = list(lists.values())
    rel = relevant_books(test, catalog, relevance_threshold)
    per_user = {}
    for rl in sorted(lists, key=lambda r: r.user):
        if rl.user not in rel:
            continue
        per_user[catalog.users.ids[rl.user]] = reciprocal_rank(rl.books, rel[rl.user])
    if not per_user:
        raise NoEvaluableUsers("none of the listed users has test events")
    value = math.fsum(per_user.values()) / len(per_user)
    return EvalReport(value, len(per_user), per_user, config)


class Evaluator:
    """Evaluates many configurations on one split, caching per-user predictions.

    Matrices and profiles depend only on the scheme and preference threshold,
    so everything downstream of prediction (expansion, fusion, top-n) can be
    re-run cheaply for limit and alpha sweeps.
    """

    def __init__(self, corpus: SplitCorpus, scheme: str = "cooc",
                 preference_threshold: int = DEFAULT_PREFERENCE_THRESHOLD,
                 engine: HybridEngine | None = None):
        if not corpus.test:
            raise EmptyTestSet("the split has no test events")
        self.corpus = corpus
        if engine is None:
            engine = HybridEngine(scheme, preference_threshold).fit(corpus.train)
        elif engine.scheme != scheme or engine.preference_threshold != preference_threshold:
            raise InvalidParameter("engine was trained with a different scheme or threshold")
        self.engine = engine
        catalog = engine.catalog
        test_users = {ev.user_id for ev in corpus.test}
        self.users = sorted(catalog.users.index(u) for u in test_users if u in catalog.users)
        self.skipped_cold_start = sum(1 for u in test_users if u not in catalog.users)
        if not self.users:
            raise NoEvaluableUsers("no test user has training ratings")
        self._cache: dict[tuple, list[RankVector]] = {}

    def _predictions(self, kind: str, agg: AggregationSpec) -> list[RankVector]:
        key = (kind, agg)
        if key not in self._cache:
            predict = self.engine.predict_books if kind == "book" else self.engine.predict_authors
            self._cache[key] = [predict(u, agg) for u in self.users]
        return self._cache[key]

    def lists(self, config: EvalConfig) -> list[RecommendationList]:
        self._check(config)
        books = self._predictions("book", config.agg_book)
        authors = self._predictions("author", config.agg_author)
        catalog = self.engine.catalog
        return [
            fuse_predictions(b, a, catalog, self.engine.profile(u), config.fusion)
            for u, b, a in zip(self.users, books, authors)
        ]

    def _check(self, config: EvalConfig):
        if config.scheme != self.engine.scheme or config.preference_threshold != self.engine.preference_threshold:
            raise InvalidParameter("config scheme/threshold differ from the evaluator's engine")

    def report(self, config: EvalConfig) -> EvalReport:
        rep = mrr(self.lists(config), self.corpus.test, config.relevance_threshold, self.engine.catalog, config)
        rep.skipped_cold_start = self.skipped_cold_start
        return rep


def evaluate(corpus: SplitCorpus, config: EvalConfig = EvalConfig()) -> EvalReport:
    """Train on ``corpus.train`` per ``config`` and score every evaluable test user."""
    return Evaluator(corpus, config.scheme, config.preference_threshold).report(config)


def _cell(fn) -> float | str:
    try:
        return fn()
    except RecommenderError as exc:
        _log.warning("sweep cell failed: %s", exc)
        return f"error: {type(exc).__name__}: {exc}"


def sweep_similarity(corpus: SplitCorpus, base_config: EvalConfig = EvalConfig(),
                     schemes: Sequence[str] = SCHEMES,
                     aggregations: Sequence[str] = AGGREGATIONS) -> list[dict]:
    """Book-only (alpha 0) and author-only (alpha 1) MRR per scheme and aggregation."""
    rows = []
    for scheme in schemes:
        evaluator = None
        try:
            evaluator = Evaluator(corpus, scheme, base_config.preference_threshold)
        except RecommenderError as exc:
            failure = f"error: {type(exc).__name__}: {exc}"
        for kind in ("book", "author"):
            for agg in aggregations:
                if kind == "book":
                    cfg = replace(base_config, scheme=scheme, agg_book=replace(base_config.agg_book, function=agg),
                                  fusion=replace(base_config.fusion, alpha=0.0))
                else:
                    cfg = replace(base_config, scheme=scheme,
                                  agg_author=replace(base_config.agg_author, function=agg),
                                  fusion=replace(base_config.fusion, alpha=1.0))
                value = failure if evaluator is None else _cell(lambda: evaluator.report(cfg).mrr)
                rows.append({"kind": kind, "scheme": scheme, "aggregation": agg, "mrr": value})
    return rows


def sweep_book_limit(corpus: SplitCorpus, base_config: EvalConfig = EvalConfig(),
                     limits: Iterable[int] = range(1, 9),
                     aggregations: Sequence[str] = AGGREGATIONS,
                     evaluator: Evaluator | None = None) -> list[dict]:
    """Author-only (alpha 1) MRR for each per-author book cap."""
    evaluator = evaluator or Evaluator(corpus, base_config.scheme, base_config.preference_threshold)
    rows = []
    for limit in limits:
        for agg in aggregations:
            def run():
                cfg = replace(base_config, agg_author=replace(base_config.agg_author, function=agg),
                              fusion=replace(base_config.fusion, alpha=1.0, max_books_per_author=limit))
                return evaluator.report(cfg).mrr
            rows.append({"limit": limit, "aggregation": agg, "mrr": _cell(run)})
    return rows


def sweep_alpha(corpus: SplitCorpus, base_config: EvalConfig = EvalConfig(),
                alphas: Iterable[float] = DEFAULT_ALPHAS,
                aggregations: Sequence[str] = AGGREGATIONS,
                evaluator: Evaluator | None = None) -> list[dict]:
    """MRR over the alpha grid for every author/book aggregation pairing."""
    evaluator = evaluator or Evaluator(corpus, base_config.scheme, base_config.preference_threshold)
    rows = []
    for alpha in alphas:
        for agg_a in aggregations:
            for agg_b in aggregations:
                def run():
                    cfg = replace(base_config,
                                  agg_author=replace(base_config.agg_author, function=agg_a),
                                  agg_book=replace(base_config.agg_book, function=agg_b),
                                  fusion=replace(base_config.fusion, alpha=float(alpha)))
                    return evaluator.report(cfg).mrr
                rows.append({"alpha": float(alpha), "agg_author": agg_a, "agg_book": agg_b, "mrr": _cell(run)})
    return rows


def best_row(rows: Sequence[dict]) -> dict | None:
    """Row with the highest numeric MRR; the earliest wins ties."""
    best = None
    for row in rows:
        if isinstance(row["mrr"], float) and (best is None or row["mrr"] > best["mrr"]):
            best = row
    return best


def rows_to_csv(rows: Sequence[dict], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(header), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()
