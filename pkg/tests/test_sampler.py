from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from keaf.errors import DataError, InsufficientDataError
from keaf.sampler import (
    Episode,
    EpisodeSpec,
    balance_corpus,
    filter_corpus,
    prepare_corpus,
    sample_episode,
    sample_episodes,
    split_train_test,
)

from conftest import make_corpus, random_corpus


def brute_force_filter(label_sets, t_l, t_u):
    """Independent reference: recount and drop until stable, on raw label sets."""
    current = [frozenset(s) for s in label_sets]
    while True:
        freq = Counter(l for s in current for l in s)
        bad = {l for l, f in freq.items() if f <= t_l or (t_u is not None and f > t_u)}
        nxt = [s for s in current if not (s & bad)]
        if nxt == current:
            return current
        current = nxt


def support_counts(episode):
    return np.array([y for _, y in episode.support]).sum(axis=0)


class TestFilter:
    def test_worked_example(self):
        sets = [("A",)] * 9 + [("A", "B")] * 3 + [("C",)]
        corpus = make_corpus(sets)
        # A (12) too frequent, C (1) too rare; removing A's products leaves B at 0
        expected = brute_force_filter(sets, 2, 10)
        assert expected == []
        with pytest.raises(DataError, match="empty result"):
            filter_corpus(corpus, 2, 10)

    def test_worked_example_with_b_surviving(self):
        sets = [("A",)] * 12 + [("B",)] * 3 + [("C",)]
        out = filter_corpus(make_corpus(sets), 2, 10)
        assert {p.labels for p in out.products} == {("B",)}
        assert len(out) == 3
        assert [frozenset(p.labels) for p in out.products] == brute_force_filter(sets, 2, 10)

    def test_all_labels_in_band_is_identity(self):
        corpus = make_corpus([("A",), ("A", "B"), ("B",)])
        assert filter_corpus(corpus, 0, 5) == corpus

    def test_no_op_thresholds(self, rng):
        corpus = random_corpus(rng)
        max_count = max(len(ids) for ids in corpus.label_index.values())
        assert filter_corpus(corpus, 0, max_count) == corpus
        assert filter_corpus(corpus, 0, None) == corpus

    def test_bad_thresholds(self, rng):
        with pytest.raises(ValueError):
            filter_corpus(random_corpus(rng), 5, 5)

    def test_catalog_is_kept(self):
        out = filter_corpus(make_corpus([("A",)] * 3 + [("B",)]), 1, None)
        assert [e.id for e in out.catalog] == ["A", "B"]
        assert out.label_index["B"] == ()

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), t_l=st.integers(0, 6), width=st.integers(1, 30))
    def test_matches_brute_force_and_is_fixed_point(self, seed, t_l, width):
        corpus = random_corpus(np.random.default_rng(seed), n_products=50)
        t_u = t_l + width
        expected = brute_force_filter([p.labels for p in corpus.products], t_l, t_u)
        if not expected:
            with pytest.raises(DataError):
                filter_corpus(corpus, t_l, t_u)
            return
        once = filter_corpus(corpus, t_l, t_u)
        assert [frozenset(p.labels) for p in once.products] == expected
        assert filter_corpus(once, t_l, t_u) == once
        for lid, ids in once.label_index.items():
            assert len(ids) == 0 or t_l < len(ids) <= t_u


class TestBalance:
    def test_ten_single_four_multi(self):
        corpus = make_corpus([("A",)] * 10 + [("A", "B")] * 4)
        out = balance_corpus(corpus, seed=3)
        singles = [p for p in out.products if len(p.labels) == 1]
        multis = [p for p in out.products if len(p.labels) >= 2]
        assert len(singles) in (4, 5)
        assert len(multis) == 4
        assert set(multis) == {p for p in corpus.products if len(p.labels) >= 2}

    def test_no_single_label_is_identity(self):
        corpus = make_corpus([("A", "B")] * 3)
        assert balance_corpus(corpus, 0) == corpus

    def test_deterministic(self):
        corpus = make_corpus([("A",)] * 30 + [("A", "B")] * 7)
        assert balance_corpus(corpus, 11) == balance_corpus(corpus, 11)
        assert balance_corpus(corpus, 11) != balance_corpus(corpus, 12)

    def test_needs_a_multi_label_product(self):
        with pytest.raises(DataError):
            balance_corpus(make_corpus([("A",)] * 3), 0)


class TestSplit:
    def ten_label_corpus(self):
        sets = []
        for i in range(10):
            sets += [(f"L{i}",)] * (20 - i)
        return make_corpus(sets)

    def test_ten_labels_forty_percent(self):
        split = split_train_test(self.ten_label_corpus(), 0.4, seed=0)
        assert split.train_labels == {f"L{i}" for i in range(6)}
        assert split.test_labels == {f"L{i}" for i in range(6, 10)}
        assert not split.train_labels & split.test_labels

    def test_zero_fraction_is_degenerate(self):
        with pytest.raises(DataError, match="degenerate split"):
            split_train_test(self.ten_label_corpus(), 0.0, seed=0)

    def test_too_few_labels_for_n_way(self):
        with pytest.raises(DataError, match="degenerate split"):
            split_train_test(self.ten_label_corpus(), 0.2, seed=0, n_way=3)

    def test_overlapping_product_goes_to_test_masked(self):
        sets = [("H",)] * 10 + [("T",)] * 2 + [("H", "T")]
        split = split_train_test(make_corpus(sets), 0.5, seed=0)
        assert split.test_labels == {"T"}
        mixed = split.test_corpus.by_id["p0012"]
        assert mixed.labels == ("T",)
        assert "p0012" not in split.train_corpus.by_id

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), frac=st.floats(0.1, 0.9))
    def test_disjoint_for_all_seeds_and_fractions(self, seed, frac):
        corpus = random_corpus(np.random.default_rng(seed), n_labels=10)
        try:
            split = split_train_test(corpus, frac, seed)
        except DataError:
            return
        assert not split.train_labels & split.test_labels
        assert set(split.train_corpus.used_labels) <= split.train_labels
        assert set(split.test_corpus.used_labels) <= split.test_labels
        ids = [p.id for p in split.train_corpus.products] + [p.id for p in split.test_corpus.products]
        assert sorted(ids) == sorted(p.id for p in corpus.products)


class TestSampleEpisode:
    def test_disjoint_labels_two_way_one_shot(self, rng):
        corpus = make_corpus([("A",)] * 5 + [("B",)] * 5)
        ep = sample_episode(corpus, EpisodeSpec(2, 1, 1), rng)
        assert len(ep.support) == 2
        assert len(ep.query) == 2
        np.testing.assert_array_equal(support_counts(ep), [1, 1])

    def test_one_way(self, rng):
        corpus = make_corpus([("A",)] * 4 + [("A", "B")] * 4)
        ep = sample_episode(corpus, EpisodeSpec(1, 2, 2), rng)
        assert all(y == (1,) for _, y in ep.support)
        assert all(len(y) == 1 for _, y in ep.query)

    def test_shared_product_covers_both_labels(self):
        corpus = make_corpus([("A", "B")] * 6)
        for seed in range(20):
            ep = sample_episode(corpus, EpisodeSpec(2, 1, 1), np.random.default_rng(seed))
            assert len(ep.support) <= 2
            assert (support_counts(ep) >= 1).all()
        # with one product carrying both labels the admission rule leaves a single support item
        sizes = {len(sample_episode(corpus, EpisodeSpec(2, 1, 1), np.random.default_rng(s)).support)
                 for s in range(20)}
        assert sizes == {1}

    def test_insufficient_data(self, rng):
        corpus = make_corpus([("A",)] * 3 + [("B",)] * 5)
        with pytest.raises(InsufficientDataError, match="insufficient data"):
            sample_episode(corpus, EpisodeSpec(2, 2, 2), rng)

    def test_deterministic_given_seed(self, small_synth):
        spec = EpisodeSpec(3, 2, 2, seed=9)
        a = list(sample_episodes(small_synth.corpus, spec, 20))
        b = list(sample_episodes(small_synth.corpus, spec, 20))
        assert a == b

    def test_record_round_trip(self, small_synth, rng):
        ep = sample_episode(small_synth.corpus, EpisodeSpec(3, 2, 2), rng)
        assert Episode.from_record(ep.to_record(7)) == ep
        assert ep.to_record(7)["episode"] == 7

    def test_prepare_balances_and_filters(self, small_synth):
        spec = EpisodeSpec(3, 1, 1, t_lower=2)
        out = prepare_corpus(small_synth.corpus, spec, balance=True)
        singles = sum(len(p.labels) == 1 for p in out.products)
        assert singles <= len(out) - singles + 1


def assert_episode_invariants(ep, corpus, spec):
    support_ids = set(ep.support_ids)
    assert len(support_ids) == len(ep.support)
    assert not support_ids & set(ep.query_ids)
    assert len(set(ep.labels)) == spec.n_way
    for pid, y in ep.support + ep.query:
        own = set(corpus.by_id[pid].labels)
        assert y == tuple(int(l in own) for l in ep.labels)
    for _, y in ep.support:
        assert sum(y) >= 1
    counts = support_counts(ep)
    assert (counts >= spec.k_support).all()
    # minimality: every support item is the reason some label reaches k_support
    for i in range(len(ep.support)):
        rest = np.array([y for j, (_, y) in enumerate(ep.support) if j != i]).reshape(-1, spec.n_way)
        assert (rest.sum(axis=0) < spec.k_support).any()


class TestEpisodeProperties:
    @pytest.mark.parametrize("k_support", [1, 2, 3])
    def test_invariants_and_minimality(self, small_synth, k_support):
        spec = EpisodeSpec(4, k_support, 2)
        rng = np.random.default_rng(k_support)
        for _ in range(200):
            assert_episode_invariants(sample_episode(small_synth.corpus, spec, rng), small_synth.corpus, spec)

    def test_minimality_exhaustive_on_tiny_fixture(self):
        sets = [("A", "B")] * 3 + [("A",)] * 3 + [("B", "C")] * 3 + [("C",)] * 3
        corpus = make_corpus(sets)
        spec = EpisodeSpec(3, 2, 1)
        for seed in range(100):
            assert_episode_invariants(sample_episode(corpus, spec, np.random.default_rng(seed)), corpus, spec)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n_way=st.integers(1, 4), k_s=st.integers(1, 3), k_q=st.integers(1, 3))
    def test_random_corpora(self, seed, n_way, k_s, k_q):
        rng = np.random.default_rng(seed)
        corpus = random_corpus(rng, n_products=120, n_labels=8)
        spec = EpisodeSpec(n_way, k_s, k_q)
        try:
            ep = sample_episode(corpus, spec, rng)
        except InsufficientDataError:
            return
        assert_episode_invariants(ep, corpus, spec)
