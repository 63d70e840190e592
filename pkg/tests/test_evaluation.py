import json
import random
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

import oracles
from conftest import ev
from oracles import random_events

from hybrid_bookrec.corpus import SplitCorpus, build_catalog, synth_generate, temporal_split
from hybrid_bookrec.errors import EmptyTestSet, InvalidParameter, NoEvaluableUsers
from hybrid_bookrec.evaluation import (
    ALPHA_HEADER,
    LIMIT_HEADER,
    SIMILARITY_HEADER,
    EvalConfig,
    Evaluator,
    best_row,
    evaluate,
    mrr,
    rows_to_csv,
    sweep_alpha,
    sweep_book_limit,
    sweep_similarity,
)
from hybrid_bookrec.hybrid import FusionSpec, HybridEngine, RecommendationList, recommend
from hybrid_bookrec.predictor import AggregationSpec


@pytest.fixture(scope="module")
def synth_split():
    return temporal_split(synth_generate(60, 12, 4, 0.8, seed=4, ratings_per_user=12), 0.9)


def _lists(catalog, per_user):
    return [RecommendationList(catalog.users.index(u), tuple((catalog.books.index(b), 1.0) for b in books))
            for u, books in per_user.items()]


@pytest.fixture
def tiny():
    train = [ev(f"u{u}", f"b{b}", "a", 3) for u in range(3) for b in range(6)]
    return build_catalog(train)


def test_mrr_perfect(tiny):
    test = [ev("u0", "b1", "a", 5), ev("u1", "b2", "a", 4)]
    rep = mrr(_lists(tiny, {"u0": ["b1", "b3"], "u1": ["b2"]}), test, 4, tiny)
    assert rep.mrr == 1.0 and rep.n_users_evaluated == 2


def test_mrr_third_position(tiny):
    test = [ev("u0", "b4", "a", 5)]
    rep = mrr(_lists(tiny, {"u0": ["b1", "b2", "b4", "b5"]}), test, 4, tiny)
    assert rep.mrr == pytest.approx(1 / 3)


def test_mrr_hit_and_miss(tiny):
    test = [ev("u0", "b2", "a", 4), ev("u1", "b5", "a", 5)]
    rep = mrr(_lists(tiny, {"u0": ["b1", "b2"], "u1": ["b1", "b2"]}), test, 4, tiny)
    assert rep.mrr == 0.25
    assert rep.per_user == {"u0": 0.5, "u1": 0.0}


def test_mrr_ignores_listed_users_without_test_events(tiny):
    test = [ev("u0", "b1", "a", 5)]
    rep = mrr(_lists(tiny, {"u0": ["b1"], "u2": ["b3"]}), test, 4, tiny)
    assert rep.n_users_evaluated == 1 and rep.mrr == 1.0


def test_mrr_low_rated_test_books_are_not_hits(tiny):
    test = [ev("u0", "b1", "a", 2)]
    rep = mrr(_lists(tiny, {"u0": ["b1"]}), test, 4, tiny)
    assert rep.mrr == 0.0 and rep.n_users_evaluated == 1


def test_mrr_errors(tiny):
    with pytest.raises(EmptyTestSet):
        mrr([], [], 4, tiny)
    with pytest.raises(NoEvaluableUsers):
        mrr(_lists(tiny, {"u0": ["b1"]}), [ev("u1", "b1", "a", 5)], 4, tiny)


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_mrr_matches_rescan(seed):
    rng = random.Random(seed)
    train = [ev(f"u{u}", f"b{b}", "a", 3) for u in range(5) for b in range(10)]
    cat = build_catalog(train)
    per_user = {f"u{u}": rng.sample([f"b{b}" for b in range(10)], rng.randint(0, 10)) for u in range(5)}
    test = [ev(f"u{rng.randrange(5)}", f"b{rng.randrange(10)}", "a", rng.randint(1, 5), day=rng.randrange(9))
            for _ in range(rng.randint(1, 15))]
    rep = mrr(_lists(cat, per_user), test, 4, cat)
    latest = oracles.latest(test)
    relevant = {}
    for (u, b), r in latest.items():
        relevant.setdefault(u, set())
        if r >= 4:
            relevant[u].add(b)
    assert rep.mrr == pytest.approx(oracles.mrr(per_user, relevant), abs=1e-12)
    assert 0 <= rep.mrr <= 1


def test_evaluate_deterministic(synth_split):
    a, b = evaluate(synth_split), evaluate(synth_split)
    assert a.to_dict(per_user=True) == b.to_dict(per_user=True)
    assert 0 <= a.mrr <= 1


def test_evaluate_report_json(synth_split):
    rep = evaluate(synth_split)
    d = json.loads(json.dumps(rep.to_dict()))
    assert set(d) == {"mrr", "n_users_evaluated", "skipped_cold_start", "config"}
    assert d["config"]["fusion"] == {"alpha": 0.1, "max_books_per_author": 4, "top_n": 10}


def test_evaluate_alpha_zero_equals_book_oracle(synth_split):
    cfg = EvalConfig(fusion=FusionSpec(alpha=0.0))
    rep = evaluate(synth_split, cfg)
    engine = HybridEngine().fit(synth_split.train)
    cat = engine.catalog
    test_users = {e.user_id for e in synth_split.test if e.user_id in cat.users}
    per_user = {}
    for uid in sorted(test_users):
        rv = engine.predict_books(engine.user_index(uid), AggregationSpec("rrf"))
        rated = engine.profile(engine.user_index(uid)).book_ratings
        nz = rv.scores[rv.scores > 0]
        floor = nz.min() if len(nz) and nz.max() > nz.min() else 0
        per_user[uid] = [cat.books.ids[b] for b in rv.ranking() if b not in rated and rv.scores[b] > floor][:10]
    relevant = {}
    for (u, b), r in oracles.latest(synth_split.test).items():
        if u in test_users:
            relevant.setdefault(u, set())
            if r >= 4:
                relevant[u].add(b)
    assert rep.mrr == pytest.approx(oracles.mrr(per_user, relevant), abs=1e-12)


def test_evaluate_matches_recommend(synth_split):
    cfg = EvalConfig(fusion=FusionSpec(alpha=0.3, max_books_per_author=2))
    ev_ = Evaluator(synth_split)
    engine = ev_.engine
    for rl in ev_.lists(cfg):
        assert rl == recommend(rl.user, engine, cfg.fusion, cfg.agg_author, cfg.agg_book)


def test_relevance_threshold_monotone(synth_split):
    lo = evaluate(synth_split, EvalConfig(relevance_threshold=1)).mrr
    hi = evaluate(synth_split, EvalConfig(relevance_threshold=5)).mrr
    assert lo >= hi


def test_cold_start_users_skipped():
    train = [ev("u1", "b1", "a1", 5, 1), ev("u1", "b2", "a1", 4, 2), ev("u2", "b1", "a1", 4, 3),
             ev("u2", "b3", "a2", 5, 4)]
    test = [ev("u1", "b3", "a2", 5, 10), ev("u9", "b1", "a1", 5, 11)]
    rep = evaluate(SplitCorpus(tuple(train), tuple(test), 0.9))
    assert rep.n_users_evaluated == 1 and rep.skipped_cold_start == 1


def test_evaluate_errors():
    train = (ev("u1", "b1", "a1", 5),)
    with pytest.raises(EmptyTestSet):
        evaluate(SplitCorpus(train, (), 0.9))
    with pytest.raises(NoEvaluableUsers):
        evaluate(SplitCorpus(train, (ev("u2", "b1", "a1", 5, 9),), 0.9))


def test_config_validation():
    with pytest.raises(InvalidParameter):
        EvalConfig(relevance_threshold=0)
    with pytest.raises(InvalidParameter):
        EvalConfig(scheme="pearson")
    assert EvalConfig(top_n=5).fusion.top_n == 5


def test_test_ratings_never_reach_training(synth_split):
    poisoned_test = tuple(replace(e, rating=6 - e.rating) for e in synth_split.test)
    poisoned = SplitCorpus(synth_split.train, poisoned_test, synth_split.split_fraction)
    a, b = Evaluator(synth_split), Evaluator(poisoned)
    assert a.engine.book_sim.digest() == b.engine.book_sim.digest()
    assert a.engine.author_sim.digest() == b.engine.author_sim.digest()


def test_sweep_similarity_shape(synth_split):
    rows = sweep_similarity(synth_split)
    assert len(rows) == 20
    assert {(r["kind"], r["scheme"], r["aggregation"]) for r in rows} == {
        (k, s, a) for k in ("book", "author")
        for s in ("cosine", "ieuc", "cooc", "cooc2-cosine", "cooc2-ieuc") for a in ("rrf", "cfpa")}
    assert all(0 <= r["mrr"] <= 1 for r in rows)
    assert rows_to_csv(rows, SIMILARITY_HEADER).splitlines()[0] == "kind,scheme,aggregation,mrr"


def test_sweep_limit_shape(synth_split):
    rows = sweep_book_limit(synth_split, limits=range(1, 9))
    assert len(rows) == 16
    assert [r["limit"] for r in rows if r["aggregation"] == "rrf"] == list(range(1, 9))
    assert rows_to_csv(rows, LIMIT_HEADER).splitlines()[0] == "limit,aggregation,mrr"


def test_sweep_limit_saturates(synth_split):
    # 4 books per author, so caps of 4 and above leave the expansion unchanged
    rows = sweep_book_limit(synth_split, limits=range(1, 9))
    for agg in ("rrf", "cfpa"):
        tail = [r["mrr"] for r in rows if r["aggregation"] == agg and r["limit"] >= 4]
        assert len(set(tail)) == 1


def test_sweep_alpha_shape(synth_split):
    rows = sweep_alpha(synth_split)
    assert len(rows) == 44
    zero = {(r["agg_author"], r["agg_book"]): r["mrr"] for r in rows if r["alpha"] == 0.0}
    assert zero[("rrf", "rrf")] == zero[("cfpa", "rrf")]
    assert zero[("rrf", "cfpa")] == zero[("cfpa", "cfpa")]
    assert rows_to_csv(rows, ALPHA_HEADER).splitlines()[0] == "alpha,agg_author,agg_book,mrr"


def test_sweep_records_failures_as_rows(synth_split):
    empty_test = SplitCorpus(synth_split.train, (ev("nobody", "b", "a", 5, 999),), 0.9)
    rows = sweep_similarity(empty_test, schemes=["cooc"])
    assert len(rows) == 4
    assert all(str(r["mrr"]).startswith("error: NoEvaluableUsers") for r in rows)
    assert best_row(rows) is None


def test_best_row():
    rows = [{"x": 1, "mrr": 0.2}, {"x": 2, "mrr": 0.5}, {"x": 3, "mrr": 0.5}, {"x": 4, "mrr": "error: X"}]
    assert best_row(rows)["x"] == 2


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_random_corpora_mrr_in_range(seed):
    events = random_events(random.Random(seed), max_events=40)
    split = temporal_split(events, 0.7)
    try:
        rep = evaluate(split)
    except (NoEvaluableUsers, EmptyTestSet):
        return
    assert 0 <= rep.mrr <= 1
    assert rep.mrr == pytest.approx(sum(rep.per_user.values()) / len(rep.per_user))
