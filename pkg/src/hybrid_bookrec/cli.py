"""Command-line entry point.

Commands::

    bookrec synth --seed 7 --output ratings.csv
    bookrec ingest --ratings ratings.csv --out-dir run/
    bookrec recommend --ratings ratings.csv --user-id u001
    bookrec evaluate --ratings ratings.csv --out-dir run/
    bookrec sweep alpha --ratings ratings.csv --out-dir run/

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines (keys are the long option names, dashes or
underscores), then command-line flags.

Exit status: 0 success, 1 input error, 2 domain error, 3 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, fields
from pathlib import Path

from scipy import sparse

from hybrid_bookrec.corpus import build_catalog, load_ratings, temporal_split, write_ratings, synth_generate
from hybrid_bookrec.errors import DomainError, InputError, InvalidParameter, MissingFile
from hybrid_bookrec.evaluation import (
    ALPHA_HEADER,
    LIMIT_HEADER,
    SIMILARITY_HEADER,
    EvalConfig,
    Evaluator,
    best_row,
    rows_to_csv,
    sweep_alpha,
    sweep_book_limit,
    sweep_similarity,
)
from hybrid_bookrec.hybrid import FusionSpec, HybridEngine
from hybrid_bookrec.predictor import AggregationSpec
from hybrid_bookrec.similarity import SCHEMES, SimilarityMatrix

_log = logging.getLogger("hybrid_bookrec")

EXIT_OK, EXIT_INPUT, EXIT_DOMAIN, EXIT_INTERNAL = 0, 1, 2, 3


@dataclass
class RunConfig:
    ratings: str | None = None
    format: str | None = None
    out_dir: str = "."
    output: str | None = None
    cache_dir: str | None = None
    no_cache: bool = False
    split_fraction: float = 0.9
    scheme: str = "cooc"
    agg_author: str = "cfpa"
    agg_book: str = "rrf"
    rrf_k: float = 60.0
    alpha: float = 0.1
    book_limit: int = 4
    top_n: int = 10
    preference_threshold: int = 4
    relevance_threshold: int = 4
    user_id: str | None = None
    limits: str = "1-8"
    alphas: str = "0:1:0.1"
    n_users: int = 200
    n_authors: int = 40
    books_per_author: int = 6
    affinity: float = 0.8
    ratings_per_user: int = 20
    seed: int | None = None

    def eval_config(self) -> EvalConfig:
        return EvalConfig(
            scheme=self.scheme,
            agg_author=AggregationSpec(self.agg_author, self.rrf_k),
            agg_book=AggregationSpec(self.agg_book, self.rrf_k),
            fusion=FusionSpec(self.alpha, self.book_limit, self.top_n),
            preference_threshold=self.preference_threshold,
            relevance_threshold=self.relevance_threshold,
        )


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    if "bool" in kind:
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if "int" in kind:
        return int(raw)
    if "float" in kind:
        return float(raw)
    return raw.strip()


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameter(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _TYPES:
            raise InvalidParameter(f"{path}:{lineno}: unknown setting {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError:
            raise InvalidParameter(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def parse_limits(text: str) -> list[int]:
    """``"1-8"`` or ``"1,2,4"``."""
    try:
        if "-" in text:
            lo, hi = text.split("-", 1)
            limits = list(range(int(lo), int(hi) + 1))
        else:
            limits = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InvalidParameter(f"bad limit range {text!r}") from None
    if not limits or min(limits) < 1:
        raise InvalidParameter(f"limits must be positive integers, got {text!r}")
    return limits


def parse_alphas(text: str) -> list[float]:
    """``"start:stop:step"`` (inclusive) or a comma list."""
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if step <= 0:
                raise ValueError
            n = int(round((stop - start) / step))
            return [round(start + i * step, 10) for i in range(n + 1)]
        return [float(x) for x in text.split(",") if x.strip()]
    except (ValueError, ZeroDivisionError):
        raise InvalidParameter(f"bad alpha grid {text!r}") from None


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _require_ratings(cfg: RunConfig) -> Path:
    if not cfg.ratings:
        raise InvalidParameter("--ratings is required")
    path = Path(cfg.ratings)
    if not path.is_file():
        raise MissingFile(f"ratings file not found: {path}")
    return path


def _load_split(cfg: RunConfig):
    events = load_ratings(_require_ratings(cfg), cfg.format)
    return events, temporal_split(events, cfg.split_fraction)


def _corpus_hash(train) -> str:
    h = hashlib.sha256()
    for ev in train:
        h.update(f"{ev.user_id}\x1f{ev.book_id}\x1f{ev.author_id}\x1f{ev.rating}\x1f{ev.review_date}\n".encode())
    return h.hexdigest()[:20]


def _save_matrix(sim: SimilarityMatrix, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "wb") as f:
        sparse.save_npz(f, sim.scores)
    os.replace(tmp, path)


def train_engine(cfg: RunConfig, train) -> HybridEngine:
    """Fit an engine, reusing matrices cached under (corpus hash, scheme, threshold)."""
    engine = HybridEngine(cfg.scheme, cfg.preference_threshold)
    if cfg.no_cache:
        return engine.fit(train)
    cache = Path(cfg.cache_dir) if cfg.cache_dir else Path(cfg.out_dir) / "cache"
    key = f"{_corpus_hash(train)}-{cfg.scheme}-t{cfg.preference_threshold}"
    paths = {kind: cache / f"{key}-{kind}.npz" for kind in ("book", "author")}
    if all(p.is_file() for p in paths.values()):
        _log.info("loading cached matrices %s", key)
        mats = tuple(SimilarityMatrix(k, cfg.scheme, sparse.load_npz(p).tocsr()) for k, p in paths.items())
        return engine.fit(train, matrices=mats)
    engine.fit(train)
    _save_matrix(engine.book_sim, paths["book"])
    _save_matrix(engine.author_sim, paths["author"])
    return engine


def cmd_synth(cfg: RunConfig) -> int:
    if cfg.seed is None:
        raise InvalidParameter("synth requires --seed")
    if not cfg.output:
        raise InvalidParameter("synth requires --output")
    events = synth_generate(cfg.n_users, cfg.n_authors, cfg.books_per_author, cfg.affinity, cfg.seed,
                            ratings_per_user=cfg.ratings_per_user)
    buf = io.StringIO()
    write_ratings(events, buf)
    atomic_write(cfg.output, buf.getvalue())
    print(f"wrote {len(events)} ratings to {cfg.output}")
    return EXIT_OK


def cmd_ingest(cfg: RunConfig) -> int:
    events, split = _load_split(cfg)
    catalog = build_catalog(split.train)
    summary = {
        "events": len(events),
        "users": len({e.user_id for e in events}),
        "books": len({e.book_id for e in events}),
        "authors": len({e.author_id for e in events}),
        "train": len(split.train),
        "test": len(split.test),
        "train_users": catalog.n_users,
        "train_books": catalog.n_books,
        "train_authors": catalog.n_authors,
        "split_fraction": split.split_fraction,
        "warnings": list(catalog.warnings),
    }
    out = Path(cfg.out_dir)
    for name, part in (("train.csv", split.train), ("test.csv", split.test)):
        buf = io.StringIO()
        write_ratings(part, buf)
        atomic_write(out / name, buf.getvalue())
    atomic_write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for key in ("events", "users", "books", "authors", "train", "test"):
        print(f"{key}: {summary[key]}")
    return EXIT_OK


def cmd_recommend(cfg: RunConfig) -> int:
    if not cfg.user_id:
        raise InvalidParameter("recommend requires --user-id")
    _, split = _load_split(cfg)
    ec = cfg.eval_config()
    engine = train_engine(cfg, split.train)
    recs = engine.recommend(engine.user_index(cfg.user_id), ec.fusion, ec.agg_author, ec.agg_book)
    text = recs.to_csv(engine.catalog)
    if cfg.output:
        atomic_write(cfg.output, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    _, split = _load_split(cfg)
    ec = cfg.eval_config()
    engine = train_engine(cfg, split.train)
    report = Evaluator(split, ec.scheme, ec.preference_threshold, engine).report(ec)
    path = Path(cfg.output) if cfg.output else Path(cfg.out_dir) / "eval_report.json"
    atomic_write(path, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"MRR {report.mrr:.6f} over {report.n_users_evaluated} users "
          f"({report.skipped_cold_start} cold-start skipped) -> {path}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, kind: str) -> int:
    _, split = _load_split(cfg)
    ec = cfg.eval_config()
    if kind == "similarity":
        rows, header = sweep_similarity(split, ec), SIMILARITY_HEADER
    else:
        engine = train_engine(cfg, split.train)
        evaluator = Evaluator(split, ec.scheme, ec.preference_threshold, engine)
        if kind == "limit":
            rows = sweep_book_limit(split, ec, parse_limits(cfg.limits), evaluator=evaluator)
            header = LIMIT_HEADER
        else:
            rows = sweep_alpha(split, ec, parse_alphas(cfg.alphas), evaluator=evaluator)
            header = ALPHA_HEADER
    path = Path(cfg.output) if cfg.output else Path(cfg.out_dir) / f"sweep_{kind}.csv"
    atomic_write(path, rows_to_csv(rows, header))
    best = best_row(rows)
    print(f"wrote {len(rows)} rows to {path}")
    if best is not None:
        print("best: " + ", ".join(f"{k}={v}" for k, v in best.items()))
    return EXIT_OK


def _add_run_options(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="key = value settings file")
    p.add_argument("--ratings", default=S, help="ratings CSV or JSON-lines file")
    p.add_argument("--format", choices=["csv", "jsonl"], default=S)
    p.add_argument("--out-dir", default=S)
    p.add_argument("--output", "-o", default=S)
    p.add_argument("--cache-dir", default=S)
    p.add_argument("--no-cache", action="store_true", default=S)
    p.add_argument("--split-fraction", type=float, default=S)
    p.add_argument("--scheme", choices=SCHEMES, default=S)
    p.add_argument("--agg-author", choices=["rrf", "cfpa"], default=S)
    p.add_argument("--agg-book", choices=["rrf", "cfpa"], default=S)
    p.add_argument("--rrf-k", type=float, default=S)
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--book-limit", type=int, default=S)
    p.add_argument("--top-n", type=int, default=S)
    p.add_argument("--preference-threshold", type=int, default=S)
    p.add_argument("--relevance-threshold", type=int, default=S)
    p.add_argument("-v", "--verbose", action="store_true", default=S)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bookrec", description="Hybrid book/author recommender and MRR evaluation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic ratings corpus")
    _add_run_options(p)
    p.add_argument("--seed", type=int, required=True)
    for name, typ in (("n-users", int), ("n-authors", int), ("books-per-author", int),
                      ("affinity", float), ("ratings-per-user", int)):
        p.add_argument(f"--{name}", type=typ, default=argparse.SUPPRESS)

    p = sub.add_parser("ingest", help="load, split and summarize a ratings file")
    _add_run_options(p)

    p = sub.add_parser("recommend", help="top-n books for one user")
    _add_run_options(p)
    p.add_argument("--user-id", default=argparse.SUPPRESS)

    p = sub.add_parser("evaluate", help="MRR on the temporal hold-out")
    _add_run_options(p)

    p = sub.add_parser("sweep", help="parameter sweep to CSV")
    p.add_argument("kind", choices=["similarity", "limit", "alpha"])
    _add_run_options(p)
    p.add_argument("--limits", default=argparse.SUPPRESS, help='e.g. "1-8" or "1,2,4"')
    p.add_argument("--alphas", default=argparse.SUPPRESS, help='e.g. "0:1:0.1" or "0,0.1,0.5"')
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    values.update({k: v for k, v in vars(args).items() if k in _TYPES})
    cfg = RunConfig(**values)
    if cfg.ratings and not Path(cfg.ratings).is_file():
        raise MissingFile(f"ratings file not found: {cfg.ratings}")
    out = Path(cfg.out_dir)
    if out.exists() and not out.is_dir():
        raise InvalidParameter(f"output directory is a file: {out}")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "recommend":
            return cmd_recommend(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        return cmd_sweep(cfg, args.kind)
    except InputError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DomainError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except Exception as exc:  # noqa: BLE001
        _log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
