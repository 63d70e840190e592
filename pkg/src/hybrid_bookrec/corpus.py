"""Rating ingestion, catalogs, temporal splitting and per-user profiles."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from hybrid_bookrec.errors import (
    EmptyInput,
    InvalidParameter,
    MalformedRecord,
    MissingFile,
    RatingOutOfRange,
    UnknownUser,
)

_log = logging.getLogger(__name__)

FIELDS = ("user_id", "book_id", "author_id", "rating", "review_date")
DEFAULT_PREFERENCE_THRESHOLD = 4


@dataclass(frozen=True, order=True)
class RatingEvent:
    user_id: str
    book_id: str
    author_id: str
    rating: int
    review_date: dt.date

    def sort_key(self):
        return (self.review_date, self.user_id, self.book_id)

    def as_row(self) -> dict:
        return {
            "user_id": self.user_id,
            "book_id": self.book_id,
            "author_id": self.author_id,
            "rating": self.rating,
            "review_date": self.review_date.isoformat(),
        }


def _parse_record(rec: Mapping, line: int) -> RatingEvent:
    missing = [f for f in FIELDS if rec.get(f) in (None, "")]
    if missing:
        raise MalformedRecord(line, f"missing field(s): {', '.join(missing)}")
    raw_rating = rec["rating"]
    try:
        if isinstance(raw_rating, bool):
            raise ValueError
        if isinstance(raw_rating, float):
            if not raw_rating.is_integer():
                raise ValueError
            rating = int(raw_rating)
        else:
            rating = int(str(raw_rating).strip())
    except ValueError:
        raise MalformedRecord(line, f"unparseable rating {raw_rating!r}") from None
    if not 1 <= rating <= 5:
        raise RatingOutOfRange(line, f"rating {rating} outside 1..5")
    try:
        date = dt.date.fromisoformat(str(rec["review_date"]).strip())
    except ValueError:
        raise MalformedRecord(line, f"unparseable review_date {rec['review_date']!r}") from None
    return RatingEvent(
        str(rec["user_id"]).strip(),
        str(rec["book_id"]).strip(),
        str(rec["author_id"]).strip(),
        rating,
        date,
    )


def load_ratings(path, format: str | None = None) -> list[RatingEvent]:
    """Read rating events from a CSV or JSON-lines file.

    ``format`` is ``"csv"`` or ``"jsonl"``; when omitted it is inferred from
    the file suffix (``.jsonl``/``.json`` mean JSON lines, anything else CSV).
    Any bad record aborts the load with an error naming its line.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"ratings file not found: {path}")
    if format is None:
        format = "jsonl" if path.suffix.lower() in (".jsonl", ".json", ".ndjson") else "csv"
    if format in ("json-lines", "jsonlines", "ndjson"):
        format = "jsonl"

    events = []
    with path.open(newline="", encoding="utf-8") as f:
        if format == "csv":
            reader = csv.DictReader(f)
            if reader.fieldnames is None:
                raise EmptyInput(f"{path} is empty")
            absent = [c for c in FIELDS if c not in reader.fieldnames]
            if absent:
                raise MalformedRecord(1, f"header lacks column(s): {', '.join(absent)}")
            for rec in reader:
                events.append(_parse_record(rec, reader.line_num))
        elif format == "jsonl":
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise MalformedRecord(lineno, f"invalid JSON: {exc.msg}") from None
                if not isinstance(rec, dict):
                    raise MalformedRecord(lineno, "record is not a JSON object")
                events.append(_parse_record(rec, lineno))
        else:
            raise InvalidParameter(f"unknown ratings format {format!r}")

    if not events:
        raise EmptyInput(f"{path} contains no rating records")
    return events


def write_ratings(events: Iterable[RatingEvent], dest) -> None:
    """Write events as ratings CSV to a path or an open text file."""
    if hasattr(dest, "write"):
        writer = csv.DictWriter(dest, fieldnames=FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(ev.as_row() for ev in events)
        return
    with open(dest, "w", newline="", encoding="utf-8") as f:
        write_ratings(events, f)


@dataclass(frozen=True)
class SplitCorpus:
    train: tuple[RatingEvent, ...]
    test: tuple[RatingEvent, ...]
    split_fraction: float


def temporal_split(events: Sequence[RatingEvent], fraction: float = 0.9) -> SplitCorpus:
    """Global chronological cut: the oldest ``ceil(fraction * N)`` events train.

    Ties on the review date are ordered by ``(user_id, book_id)`` so the
    boundary is reproducible.
    """
    if not 0 < fraction < 1:
        raise InvalidParameter(f"split fraction must lie in (0, 1), got {fraction}")
    if not events:
        raise EmptyInput("no events to split")
    ordered = sorted(events, key=RatingEvent.sort_key)
    # round() guards against 0.9 * 10 style products landing a hair above an integer
    n_train = math.ceil(round(fraction * len(ordered), 9))
    return SplitCorpus(tuple(ordered[:n_train]), tuple(ordered[n_train:]), fraction)


class Registry:
    """Bidirectional mapping between opaque string ids and dense indices."""

    def __init__(self, ids: Iterable[str]):
        self.ids = tuple(ids)
        self._index = {k: i for i, k in enumerate(self.ids)}
        if len(self._index) != len(self.ids):
            raise ValueError("duplicate ids in registry")

    def __len__(self):
        return len(self.ids)

    def __contains__(self, key):
        return key in self._index

    def __iter__(self):
        return iter(self.ids)

    def index(self, key: str) -> int:
        return self._index[key]

    def get(self, key: str, default=None):
        return self._index.get(key, default)

    def __eq__(self, other):
        return isinstance(other, Registry) and self.ids == other.ids

    def __repr__(self):
        return f"Registry({len(self.ids)} ids)"


def _frozen(arr) -> np.ndarray:
    arr = np.asarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Catalog:
    users: Registry
    books: Registry
    authors: Registry
    book_author: np.ndarray
    popularity: np.ndarray
    warnings: tuple[str, ...] = ()

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_books(self) -> int:
        return len(self.books)

    @property
    def n_authors(self) -> int:
        return len(self.authors)

    @cached_property
    def author_books(self) -> tuple[np.ndarray, ...]:
        """Per author, its book indices by popularity descending, index ascending."""
        out = []
        for a in range(self.n_authors):
            books = np.flatnonzero(self.book_author == a)
            order = np.lexsort((books, -self.popularity[books]))
            out.append(_frozen(books[order]))
        return tuple(out)

    @property
    def max_books_per_author(self) -> int:
        return max((len(b) for b in self.author_books), default=0)


def build_catalog(train: Sequence[RatingEvent]) -> Catalog:
    """Index the users, books and authors of the training events.

    Registries are ordered by id, so permuting ``train`` never changes an
    index. A book seen with two different authors keeps the first one.
    """
    if not train:
        raise EmptyInput("cannot build a catalog from no events")
    author_of: dict[str, str] = {}
    warnings = []
    for ev in train:
        seen = author_of.setdefault(ev.book_id, ev.author_id)
        if seen != ev.author_id:
            msg = f"book {ev.book_id!r} listed under authors {seen!r} and {ev.author_id!r}; keeping {seen!r}"
            if msg not in warnings:
                warnings.append(msg)
                _log.warning(msg)

    users = Registry(sorted({ev.user_id for ev in train}))
    books = Registry(sorted(author_of))
    authors = Registry(sorted(set(author_of.values())))
    book_author = np.array([authors.index(author_of[b]) for b in books.ids], dtype=np.int64)
    popularity = np.zeros(len(books), dtype=np.int64)
    for ev in train:
        popularity[books.index(ev.book_id)] += 1
    return Catalog(users, books, authors, _frozen(book_author), _frozen(popularity), tuple(warnings))


def latest_ratings(events: Iterable[RatingEvent], catalog: Catalog) -> dict[tuple[int, int], int]:
    """Collapse repeated (user, book) ratings to the most recent one.

    Same-day duplicates resolve to the higher rating so the result does not
    depend on event order. Events outside the catalog are ignored.
    """
    best: dict[tuple[int, int], tuple[dt.date, int]] = {}
    for ev in events:
        u = catalog.users.get(ev.user_id)
        b = catalog.books.get(ev.book_id)
        if u is None or b is None:
            continue
        cand = (ev.review_date, ev.rating)
        cur = best.get((u, b))
        if cur is None or cand > cur:
            best[(u, b)] = cand
    return {key: best[key][1] for key in sorted(best)}


@dataclass(frozen=True)
class UserProfile:
    user: int
    preferred_books: frozenset[int]
    book_ratings: Mapping[int, int]
    author_avg_rating: Mapping[int, float]
    author_pref_count: Mapping[int, int]

    @property
    def favorite_authors(self) -> list[int]:
        return sorted(a for a, c in self.author_pref_count.items() if c >= 1)


def profile_from_ratings(
    user: int,
    book_ratings: Mapping[int, int],
    catalog: Catalog,
    preference_threshold: int = DEFAULT_PREFERENCE_THRESHOLD,
) -> UserProfile:
    ratings = dict(sorted(book_ratings.items()))
    preferred = frozenset(b for b, r in ratings.items() if r >= preference_threshold)
    sums: dict[int, int] = defaultdict(int)
    counts: dict[int, int] = defaultdict(int)
    pref_count: dict[int, int] = defaultdict(int)
    for b, r in ratings.items():
        a = int(catalog.book_author[b])
        sums[a] += r
        counts[a] += 1
        if b in preferred:
            pref_count[a] += 1
    avg = {a: sums[a] / counts[a] for a in sorted(sums)}
    return UserProfile(user, preferred, ratings, avg, dict(sorted(pref_count.items())))


def build_profile(
    train: Sequence[RatingEvent],
    catalog: Catalog,
    user: int,
    preference_threshold: int = DEFAULT_PREFERENCE_THRESHOLD,
) -> UserProfile:
    if not 0 <= user < catalog.n_users:
        raise UnknownUser(f"user index {user} not in catalog")
    uid = catalog.users.ids[user]
    own = latest_ratings((ev for ev in train if ev.user_id == uid), catalog)
    return profile_from_ratings(user, {b: r for (_, b), r in own.items()}, catalog, preference_threshold)


def build_profiles(
    ratings: Mapping[tuple[int, int], int],
    catalog: Catalog,
    preference_threshold: int = DEFAULT_PREFERENCE_THRESHOLD,
) -> list[UserProfile]:
    """Profiles for every catalog user from a collapsed rating table."""
    per_user: list[dict[int, int]] = [{} for _ in range(catalog.n_users)]
    for (u, b), r in ratings.items():
        per_user[u][b] = r
    return [profile_from_ratings(u, per_user[u], catalog, preference_threshold) for u in range(catalog.n_users)]


@dataclass(frozen=True)
class SynthCorpus:
    events: list[RatingEvent]
    liked_authors: dict[str, frozenset[str]]


def synth_corpus(
    n_users: int,
    n_authors: int,
    books_per_author: int,
    affinity: float,
    seed: int,
    *,
    ratings_per_user: int = 20,
    liked_per_user: int = 4,
    authors_per_genre: int = 4,
    start_date: dt.date = dt.date(2000, 1, 1),
) -> SynthCorpus:
    """Synthetic rating corpus with planted author affinity.

    Authors are grouped into genres; each user draws a genre and up to
    ``liked_per_user`` liked authors inside it (by default the whole
    genre). A user's pick comes from a liked author with probability
    ``affinity``, otherwise from the whole catalog, weighted by a
    Zipf-like per-book appeal. With probability ``affinity`` a rating is
    forced high (4-5) for a liked author and low (1-3) otherwise; the rest
    are uniform on 1-5, so ``affinity=0`` makes ratings independent of
    authorship. Events are shuffled across users and dated one day apart
    in generation order. The planted liked-author sets are returned too.
    """
    for name, val in (("n_users", n_users), ("n_authors", n_authors),
                      ("books_per_author", books_per_author),
                      ("ratings_per_user", ratings_per_user),
                      ("liked_per_user", liked_per_user),
                      ("authors_per_genre", authors_per_genre)):
        if int(val) != val or val < 1:
            raise InvalidParameter(f"{name} must be a positive integer, got {val!r}")
    if not 0.0 <= affinity <= 1.0:
        raise InvalidParameter(f"affinity must lie in [0, 1], got {affinity!r}")

    rng = np.random.default_rng(seed)
    n_books = n_authors * books_per_author
    book_author = np.repeat(np.arange(n_authors), books_per_author)
    appeal = 1.0 / np.tile(np.arange(1, books_per_author + 1), (n_authors, 1))
    appeal = rng.permuted(appeal, axis=1).ravel()
    genre_of = np.arange(n_authors) // authors_per_genre
    n_genres = int(genre_of.max()) + 1

    uw, aw, bw = len(str(n_users)), len(str(n_authors)), len(str(books_per_author))
    user_ids = [f"u{u:0{uw}d}" for u in range(n_users)]
    author_ids = [f"a{a:0{aw}d}" for a in range(n_authors)]
    book_ids = [f"a{a:0{aw}d}b{k:0{bw}d}" for a in range(n_authors) for k in range(books_per_author)]

    picks = []
    liked_by_user = {}
    for u in range(n_users):
        g = rng.integers(n_genres)
        pool = np.flatnonzero(genre_of == g)
        liked = rng.choice(pool, size=min(liked_per_user, len(pool)), replace=False)
        liked_mask = np.isin(book_author, liked)
        liked_by_user[user_ids[u]] = frozenset(author_ids[a] for a in liked)
        n_ratings = int(rng.integers(ratings_per_user // 2, ratings_per_user * 3 // 2 + 1))
        n_ratings = min(n_books, max(1, n_ratings))
        available = np.ones(n_books, dtype=bool)
        for _ in range(n_ratings):
            from_liked = rng.random() < affinity and (available & liked_mask).any()
            mask = available & liked_mask if from_liked else available
            w = appeal * mask
            b = int(rng.choice(n_books, p=w / w.sum()))
            available[b] = False
            if rng.random() < affinity:
                rating = int(rng.integers(4, 6)) if liked_mask[b] else int(rng.integers(1, 4))
            else:
                rating = int(rng.integers(1, 6))
            picks.append((u, b, rating))

    order = rng.permutation(len(picks))
    events = [
        RatingEvent(
            user_ids[picks[i][0]],
            book_ids[picks[i][1]],
            author_ids[book_author[picks[i][1]]],
            picks[i][2],
            start_date + dt.timedelta(days=pos),
        )
        for pos, i in enumerate(order)
    ]
    return SynthCorpus(events, liked_by_user)


def synth_generate(
    n_users: int,
    n_authors: int,
    books_per_author: int,
    affinity: float,
    seed: int,
    **kwargs,
) -> list[RatingEvent]:
    """Events of :func:`synth_corpus`; deterministic for a fixed seed."""
    return synth_corpus(n_users, n_authors, books_per_author, affinity, seed, **kwargs).events
