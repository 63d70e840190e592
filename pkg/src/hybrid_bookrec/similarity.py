"""Item x item similarity matrices for books and authors.

Five schemes are supported: ``cosine`` and ``ieuc`` (inverted Euclidean
distance) over item x user rating vectors, ``cooc`` (number of users who
prefer both items), and ``cooc2-cosine`` / ``cooc2-ieuc``, which compare
items by their rows of the co-occurrence matrix.

All matrices are scipy CSR, exactly symmetric, with an empty diagonal.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse

from hybrid_bookrec.corpus import (
    DEFAULT_PREFERENCE_THRESHOLD,
    Catalog,
    RatingEvent,
    latest_ratings,
)
from hybrid_bookrec.errors import KindMismatch, SchemeMismatch

KINDS = ("book", "author")
SCHEMES = ("cosine", "ieuc", "cooc", "cooc2-cosine", "cooc2-ieuc")
IEUC_EPS = 1e-9
IEUC_CAP = 1e9  # 1 / IEUC_EPS, spelled out because the float division is not exact


def _check_kind(kind: str) -> None:
    if kind not in KINDS:
        raise KindMismatch(f"kind must be one of {KINDS}, got {kind!r}")


@dataclass(frozen=True, eq=False)
class ItemUserMatrix:
    kind: str
    rows: sparse.csr_matrix  # items x users

    @property
    def n_items(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    kind: str
    scheme: str
    scores: sparse.csr_matrix

    @property
    def n_items(self) -> int:
        return self.scores.shape[0]

    def column(self, item: int) -> np.ndarray:
        return self.scores.getrow(item).toarray().ravel()

    def toarray(self) -> np.ndarray:
        return self.scores.toarray()

    def digest(self) -> str:
        """Content hash, stable across runs for equal matrices."""
        s = self.scores
        h = hashlib.sha256(f"{self.kind}|{self.scheme}|{s.shape}".encode())
        for arr in (s.indptr, s.indices, s.data):
            h.update(np.ascontiguousarray(arr, dtype=np.float64 if arr is s.data else np.int64).tobytes())
        return h.hexdigest()


def _canonical(m) -> sparse.csr_matrix:
    """Symmetric, zero-diagonal, canonically ordered CSR built from the upper triangle."""
    upper = sparse.triu(sparse.csr_matrix(m, dtype=np.float64), k=1).tocsr()
    upper.eliminate_zeros()
    full = (upper + upper.T).tocsr()
    full.sum_duplicates()
    full.sort_indices()
    return full


def _ratings_table(train, catalog, ratings):
    return ratings if ratings is not None else latest_ratings(train, catalog)


def build_item_user(
    train: Sequence[RatingEvent],
    catalog: Catalog,
    kind: str,
    ratings: Mapping[tuple[int, int], int] | None = None,
) -> ItemUserMatrix:
    """Item x user matrix; author entries are the user's mean rating over that author's books.

    ``ratings`` may carry a precomputed :func:`latest_ratings` table.
    """
    _check_kind(kind)
    table = _ratings_table(train, catalog, ratings)
    if table:
        keys = np.array(list(table.keys()), dtype=np.int64)
        users, books = keys[:, 0], keys[:, 1]
        vals = np.array(list(table.values()), dtype=np.float64)
    else:
        users = books = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    shape = (catalog.n_books, catalog.n_users)
    rows = sparse.csr_matrix((vals, (books, users)), shape=shape)
    if kind == "author":
        ashape = (catalog.n_authors, catalog.n_users)
        authors = catalog.book_author[books]
        sums = sparse.csr_matrix((vals, (authors, users)), shape=ashape)
        counts = sparse.csr_matrix((np.ones_like(vals), (authors, users)), shape=ashape)
        sums.sum_duplicates()
        counts.sum_duplicates()
        # identical sparsity pattern, so data arrays align entry for entry
        rows = sparse.csr_matrix((sums.data / counts.data, sums.indices, sums.indptr), shape=ashape)
    rows.sort_indices()
    return ItemUserMatrix(kind, rows)


def _row_vectors(m) -> sparse.csr_matrix:
    return sparse.csr_matrix(m.rows if isinstance(m, ItemUserMatrix) else m, dtype=np.float64)


def _cosine(x: sparse.csr_matrix) -> sparse.csr_matrix:
    norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
    inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    gram = (x @ x.T).tocsr()
    scaled = sparse.diags(inv) @ gram @ sparse.diags(inv)
    scaled = sparse.csr_matrix(scaled)
    np.clip(scaled.data, 0.0, 1.0, out=scaled.data)
    return _canonical(scaled)


def _ieuc(x: sparse.csr_matrix) -> sparse.csr_matrix:
    sq = np.asarray(x.multiply(x).sum(axis=1)).ravel()
    gram = (x @ x.T).toarray()
    d2 = sq[:, None] + sq[None, :] - 2.0 * gram
    # the Gram expansion cancels badly for near-identical rows; redo those exactly
    near = np.argwhere(np.triu(d2 <= 1e-6 * np.maximum(1.0, sq[:, None] + sq[None, :]), k=1))
    for i, j in near:
        diff = (x.getrow(i) - x.getrow(j)).toarray()
        d2[i, j] = float(np.dot(diff.ravel(), diff.ravel()))
    np.maximum(d2, 0.0, out=d2)
    with np.errstate(divide="ignore"):
        scores = np.minimum(1.0 / np.sqrt(d2), IEUC_CAP)
    return _canonical(np.triu(scores, k=1))


def cosine_matrix(m: ItemUserMatrix) -> SimilarityMatrix:
    return SimilarityMatrix(m.kind, "cosine", _cosine(_row_vectors(m)))


def ieuc_matrix(m: ItemUserMatrix) -> SimilarityMatrix:
    """Inverted Euclidean distance, capped at 1e9 for coincident vectors; missing ratings count as 0."""
    return SimilarityMatrix(m.kind, "ieuc", _ieuc(_row_vectors(m)))


def preference_matrix(
    train: Sequence[RatingEvent],
    catalog: Catalog,
    kind: str,
    preference_threshold: int = DEFAULT_PREFERENCE_THRESHOLD,
    ratings: Mapping[tuple[int, int], int] | None = None,
) -> sparse.csr_matrix:
    """Binary user x item matrix of preferred items.

    An author is preferred when at least one of their books is.
    """
    _check_kind(kind)
    table = _ratings_table(train, catalog, ratings)
    pairs = {(u, b) for (u, b), r in table.items() if r >= preference_threshold}
    if kind == "author":
        pairs = {(u, int(catalog.book_author[b])) for u, b in pairs}
        n_items = catalog.n_authors
    else:
        n_items = catalog.n_books
    pairs = sorted(pairs)
    u = np.array([p[0] for p in pairs], dtype=np.int64)
    i = np.array([p[1] for p in pairs], dtype=np.int64)
    return sparse.csr_matrix((np.ones(len(pairs), dtype=np.int64), (u, i)), shape=(catalog.n_users, n_items))


def cooccurrence_matrix(
    train: Sequence[RatingEvent],
    catalog: Catalog,
    kind: str,
    preference_threshold: int = DEFAULT_PREFERENCE_THRESHOLD,
    ratings: Mapping[tuple[int, int], int] | None = None,
) -> SimilarityMatrix:
    """Count, for each item pair, the users who prefer both (at most one per user)."""
    pref = preference_matrix(train, catalog, kind, preference_threshold, ratings)
    counts = (pref.T @ pref).tocsr()
    return SimilarityMatrix(kind, "cooc", _canonical(counts))


def second_order_matrix(cooc: SimilarityMatrix, metric: str) -> SimilarityMatrix:
    """Compare items by their co-occurrence rows using ``metric`` (cosine or ieuc)."""
    if cooc.scheme != "cooc":
        raise SchemeMismatch(f"second-order vectors need a cooc matrix, got {cooc.scheme!r}")
    x = sparse.csr_matrix(cooc.scores, dtype=np.float64)
    if metric == "cosine":
        scores = _cosine(x)
    elif metric == "ieuc":
        scores = _ieuc(x)
    else:
        raise SchemeMismatch(f"unknown second-order metric {metric!r}")
    return SimilarityMatrix(cooc.kind, f"cooc2-{metric}", scores)


def build_similarity(
    train: Sequence[RatingEvent],
    catalog: Catalog,
    kind: str,
    scheme: str,
    preference_threshold: int = DEFAULT_PREFERENCE_THRESHOLD,
    ratings: Mapping[tuple[int, int], int] | None = None,
) -> SimilarityMatrix:
    """Dispatch to the builder for ``scheme``."""
    _check_kind(kind)
    table = _ratings_table(train, catalog, ratings)
    if scheme == "cosine":
        return cosine_matrix(build_item_user(train, catalog, kind, table))
    if scheme == "ieuc":
        return ieuc_matrix(build_item_user(train, catalog, kind, table))
    if scheme in ("cooc", "cooc2-cosine", "cooc2-ieuc"):
        cooc = cooccurrence_matrix(train, catalog, kind, preference_threshold, table)
        if scheme == "cooc":
            return cooc
        return second_order_matrix(cooc, scheme.split("-", 1)[1])
    raise SchemeMismatch(f"unknown similarity scheme {scheme!r}; expected one of {SCHEMES}")


def dump_matrix(sim: SimilarityMatrix, path, labels: Sequence[str] | None = None) -> None:
    """Write the upper triangle as ``item_i,item_j,score`` rows (i < j)."""
    upper = sparse.triu(sim.scores, k=1).tocoo()
    order = np.lexsort((upper.col, upper.row))
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["item_i", "item_j", "score"])
        for k in order:
            i, j = int(upper.row[k]), int(upper.col[k])
            w.writerow([labels[i] if labels else i, labels[j] if labels else j, repr(float(upper.data[k]))])
