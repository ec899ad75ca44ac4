import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from caal.acquisition import (STRATEGIES, PoolStats, StrategyKind, _repair_empty, badge_embeddings,
                              badge_select, bald_score, caal_score, kcenter_greedy, kmeans, minmax_normalize,
                              nearest_to_centroids, score, select, select_lcmd, select_topB)
from caal.ensemble import summarize
from caal.errors import BudgetError, ConfigError

from oracles import best_partition, kcenter_bruteforce, nearest_to_mean

unit = st.floats(0, 1)


def pool_stats(mu, s2, emb=None):
    return PoolStats.from_summary(summarize(mu, s2), emb)


def random_pool(rng, n, M=4, d=3):
    mu = rng.normal(size=(n, M))
    s2 = rng.uniform(1e-3, 2.0, size=(n, M))
    return pool_stats(mu, s2, rng.normal(size=(n, d)))


class TestMinMax:
    def test_three_values(self):
        np.testing.assert_array_equal(minmax_normalize([2, 4, 6]), [0.0, 2 / (4 + 1e-6), 4 / (4 + 1e-6)])

    def test_constant(self):
        np.testing.assert_array_equal(minmax_normalize([3.0, 3.0, 3.0]), [0.0, 0.0, 0.0])

    def test_epsilon_dominated(self):
        out = minmax_normalize([0.0, 1e-7])
        assert out[1] == pytest.approx(1e-7 / (1e-7 + 1e-6))
        assert out[1] == pytest.approx(0.0909090909, abs=1e-9)

    def test_empty(self):
        with pytest.raises(ConfigError):
            minmax_normalize([])

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
    def test_range(self, v):
        out = minmax_normalize(v)
        assert np.all(out >= 0.0) and np.all(out < 1.0)


class TestScores:
    def test_caal_hand_value(self):
        assert caal_score(0.8, 0.25, 1.0) == pytest.approx(0.6)

    @given(unit, unit, st.floats(0, 20))
    def test_caal_in_unit_interval(self, e, a, beta):
        assert 0.0 <= caal_score(e, a, beta) <= 1.0

    @given(unit, unit, unit, st.floats(0.01, 20))
    def test_caal_monotone_in_ale(self, e, a1, a2, beta):
        lo, hi = sorted((a1, a2))
        assert caal_score(e, hi, beta) <= caal_score(e, lo, beta)

    def test_bald_agreeing_members(self):
        s = summarize([[0.0, 0.0]], [[1.0, 1.0]])
        assert s.epi[0] == 0.0 and bald_score(s)[0] == 0.0

    def test_bald_hand_value(self):
        s = summarize([[0.0, 2.0]], [[1.0, 1.0]])
        assert bald_score(s)[0] == pytest.approx(0.5 * np.log(2), abs=1e-15)
        assert bald_score(s)[0] == pytest.approx(0.3466, abs=1e-4)

    def test_strategy_formulas(self):
        rng = np.random.default_rng(0)
        stats = random_pool(rng, 12)
        assert np.array_equal(score(StrategyKind("ale"), stats).score, stats.ale)
        assert np.array_equal(score(StrategyKind("qbc"), stats).score, stats.epi)
        assert np.array_equal(score(StrategyKind("alm"), stats).score, stats.epi + stats.ale)
        assert np.array_equal(score(StrategyKind("confidence"), stats).score, 1 - stats.ale_norm)
        np.testing.assert_array_equal(score(StrategyKind("caal", 2.0), stats).score,
                                      stats.epi_norm * (1 - stats.ale_norm) ** 2)
        assert np.all(np.isnan(score(StrategyKind("coreset"), stats).score))

    def test_random_is_seeded(self):
        stats = random_pool(np.random.default_rng(1), 10)
        a = score(StrategyKind("random"), stats, 5).score
        b = score(StrategyKind("random"), stats, 5).score
        assert np.array_equal(a, b) and np.all((a >= 0) & (a < 1))

    def test_normalisation_uses_pool_only(self):
        s = summarize([[0.0, 1.0], [0.0, 3.0]], [[1.0, 1.0], [2.0, 2.0]])
        stats = PoolStats.from_summary(s)
        assert stats.epi_norm[0] == 0.0 and stats.ale_norm[0] == 0.0

    @pytest.mark.parametrize("kw", [{"kind": "entropy"}, {"beta": -1.0}])
    def test_strategy_validation(self, kw):
        with pytest.raises(ConfigError):
            StrategyKind(**kw)


class TestTopB:
    def test_basic(self):
        assert set(select_topB([0.1, 0.9, 0.5], 2)) == {1, 2}

    def test_ties(self):
        assert select_topB([0.3, 0.3, 0.3], 2).tolist() == [0, 1]

    def test_whole_pool(self):
        assert sorted(select_topB([3, 1, 2], 3)) == [0, 1, 2]

    def test_budget(self):
        with pytest.raises(BudgetError):
            select_topB([1.0, 2.0], 3)

    @given(st.lists(st.integers(-1000, 1000), min_size=1, max_size=30, unique=True),
           st.integers(1, 50), st.integers(-100, 100), st.data())
    def test_affine_invariance(self, s, a, b, data):
        B = data.draw(st.integers(1, len(s)))
        s = np.array(s, dtype=float)
        assert set(select_topB(s, B)) == set(select_topB(a * s + b, B))


class TestKCenter:
    def test_farthest(self):
        assert kcenter_greedy([0, 10, 5], [0], 1).tolist() == [1]

    def test_two_picks(self):
        assert kcenter_greedy([0, 10, 5], [0], 2).tolist() == [1, 2]

    def test_no_labelled_starts_at_zero(self):
        assert kcenter_greedy([[3.0], [7.0]], np.empty((0, 1)), 1).tolist() == [0]

    def test_empty_pool(self):
        with pytest.raises(BudgetError):
            kcenter_greedy(np.empty((0, 2)), np.empty((0, 2)), 1)

    @settings(max_examples=200)
    @given(st.integers(1, 8), st.integers(0, 3), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**32 - 1))
    def test_matches_bruteforce(self, n, n_lab, B, d, seed):
        assume(B <= n)
        rng = np.random.default_rng(seed)
        pool, lab = rng.normal(size=(n, d)), rng.normal(size=(n_lab, d))
        assert kcenter_greedy(pool, lab, B).tolist() == kcenter_bruteforce(list(pool), list(lab), B)

    @settings(max_examples=100)
    @given(st.integers(2, 10), st.integers(1, 4), st.integers(0, 2**32 - 1))
    def test_permutation_invariant(self, n, B, seed):
        assume(B <= n)
        rng = np.random.default_rng(seed)
        pool, lab = rng.normal(size=(n, 2)), rng.normal(size=(2, 2))
        perm = rng.permutation(n)
        a = {tuple(p) for p in pool[kcenter_greedy(pool, lab, B)]}
        b = {tuple(p) for p in pool[perm][kcenter_greedy(pool[perm], lab, B)]}
        assert a == b


def blobs(rng, k, sizes, d=2, spread=0.1, gap=50.0):
    centres = rng.normal(size=(k, d)) * gap
    pts = [centres[c] + rng.uniform(-spread, spread, size=(s, d)) for c, s in enumerate(sizes)]
    return np.concatenate(pts)


class TestKMeans:
    def test_two_blobs(self):
        x = np.array([0.0, 0.1, 10.0, 10.1])
        picks = select_lcmd(x, 2, seed=0)
        assert {int(p) // 2 for p in picks} == {0, 1}

    def test_k_equals_n(self):
        x = np.array([[0.0], [3.0], [7.0]])
        assign, cent = kmeans(x, 3, seed=4)
        np.testing.assert_array_equal(np.sort(cent[:, 0]), [0.0, 3.0, 7.0])
        assert sorted(nearest_to_centroids(x, assign, cent)) == [0, 1, 2]

    def test_duplicates_lowest_index(self):
        assert select_lcmd(np.ones((4, 2)), 1, seed=3).tolist() == [0]

    def test_k_too_large(self):
        with pytest.raises(BudgetError):
            kmeans(np.zeros((2, 1)), 3)

    def test_reproducible(self):
        x = np.random.default_rng(0).normal(size=(40, 3))
        a, b = kmeans(x, 4, seed=9), kmeans(x, 4, seed=9)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_representatives_distinct_with_duplicates(self):
        x = np.concatenate([np.zeros((10, 1)), np.ones((1, 1)) * 100])
        picks = select_lcmd(x, 3, seed=0)
        assert len(set(picks.tolist())) == 3 and 10 in picks

    def test_empty_cluster_reseeded_at_farthest_point(self):
        x = np.array([[0.0], [1.0], [9.0]])
        assign = np.zeros(3, dtype=int)
        cent = np.array([[0.5], [50.0]])
        _repair_empty(x, assign, cent, 2)
        assert cent[1, 0] == 9.0 and assign.tolist() == [0, 0, 1]

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 2), st.lists(st.integers(1, 4), min_size=2, max_size=2), st.integers(0, 2**32 - 1))
    def test_lcmd_matches_exhaustive_optimum(self, k, sizes, seed):
        rng = np.random.default_rng(seed)
        x = blobs(rng, k, sizes[:k])
        expect = {nearest_to_mean(x, idx) for idx in best_partition(x, k)}
        assert set(select_lcmd(x, k, seed=seed).tolist()) == expect


class TestBadge:
    def test_embedding(self):
        g = badge_embeddings([[1.0, 2.0], [3.0, 4.0]], [4.0, 0.25])
        np.testing.assert_array_equal(g, [[2.0, 4.0], [1.5, 2.0]])

    def test_zero_epistemic_degenerates_to_index_order(self):
        stats = pool_stats(np.zeros((6, 3)), np.ones((6, 3)), np.random.default_rng(0).normal(size=(6, 4)))
        assert badge_select(stats, 3, seed=1).tolist() == [0, 1, 2]

    def test_dominant_candidate_against_one_means(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(5, 3))
        mu = np.zeros((5, 2))
        mu[3] = [-10.0, 10.0]
        mu[[0, 1, 2, 4], 1] = rng.uniform(0.0, 1e-3, size=4)
        stats = pool_stats(mu, np.ones((5, 2)), z)
        g = badge_embeddings(z, stats.epi)
        expect = nearest_to_mean(g, list(range(5)))
        assert badge_select(stats, 1, seed=0).tolist() == [expect]

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 2), st.lists(st.integers(1, 4), min_size=2, max_size=2), st.integers(0, 2**32 - 1))
    def test_matches_exhaustive_optimum(self, k, sizes, seed):
        rng = np.random.default_rng(seed)
        g = blobs(rng, k, sizes[:k], d=3)
        epi = rng.uniform(0.5, 2.0, size=len(g))
        z = g / np.sqrt(epi)[:, None]
        mu = np.stack([np.sqrt(epi), -np.sqrt(epi)], axis=1)  # population variance of +-a is a^2
        stats = pool_stats(mu, np.ones_like(mu), z)
        g_used = badge_embeddings(z, stats.epi)
        expect = {nearest_to_mean(g_used, idx) for idx in best_partition(g_used, k)}
        assert set(badge_select(stats, k, seed=seed).tolist()) == expect

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.25, 4.0, 16.0]), st.integers(1, 4))
    def test_scale_invariance(self, seed, c, B):
        rng = np.random.default_rng(seed)
        n = 12
        mu, z = rng.normal(size=(n, 3)), rng.normal(size=(n, 4))
        a = pool_stats(mu, np.ones((n, 3)), z)
        b = pool_stats(mu * np.sqrt(c), np.ones((n, 3)), z)
        assert set(badge_select(a, B, seed).tolist()) == set(badge_select(b, B, seed).tolist())


class TestSelect:
    @pytest.mark.parametrize("kind", STRATEGIES)
    def test_size_and_distinct(self, kind):
        rng = np.random.default_rng(3)
        stats = random_pool(rng, 25)
        picks, _ = select(StrategyKind(kind), stats, 7, rng=0, labelled_embeddings=rng.normal(size=(4, 3)))
        assert len(picks) == 7 and len(set(picks.tolist())) == 7
        assert np.all((picks >= 0) & (picks < 25))

    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from(STRATEGIES), st.integers(1, 15), st.integers(0, 2**32 - 1))
    def test_size_property(self, kind, B, seed):
        stats = random_pool(np.random.default_rng(seed), 15)
        picks, _ = select(StrategyKind(kind), stats, B, rng=seed)
        assert len(set(picks.tolist())) == B

    def test_budget(self):
        stats = random_pool(np.random.default_rng(0), 4)
        with pytest.raises(BudgetError):
            select(StrategyKind("qbc"), stats, 5)

    def test_caal_beta_zero_equals_qbc(self):
        stats = random_pool(np.random.default_rng(7), 30)
        a, _ = select(StrategyKind("caal", 0.0), stats, 10)
        b, _ = select(StrategyKind("qbc"), stats, 10)
        assert a.tolist() == b.tolist()
