import threading
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_table_game, permutation_scan_oracle, random_game
from pfedsv.errors import PlayerLimitExceeded
from pfedsv.shapley import (
    CoalitionGame,
    exact_shapley_permutation,
    exact_shapley_subset,
    monte_carlo_shapley,
)

EXACT_METHODS = [exact_shapley_permutation, exact_shapley_subset]


def two_player_split():
    return make_table_game({frozenset({1, 2}): 1.0}, (1, 2))


def majority_game():
    table = {
        frozenset(s): 1.0
        for s in [{1, 2}, {1, 3}, {2, 3}, {1, 2, 3}]
    }
    return make_table_game(table, (1, 2, 3))


def asymmetric_game():
    table = {frozenset({1}): 1.0, frozenset({1, 2}): 2.0}
    return make_table_game(table, (1, 2))


class TestExactValues:
    @pytest.mark.parametrize("solve", EXACT_METHODS)
    def test_equal_split(self, solve):
        res = solve(two_player_split())
        np.testing.assert_allclose(res.values, [0.5, 0.5], atol=1e-15)

    @pytest.mark.parametrize("solve", EXACT_METHODS)
    def test_majority_symmetry(self, solve):
        res = solve(majority_game())
        np.testing.assert_allclose(res.values, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    @pytest.mark.parametrize("solve", EXACT_METHODS)
    def test_asymmetric_hand_enumeration(self, solve):
        # join order (1,2): marginals (1, 1); join order (2,1): marginals (2, 0)
        res = solve(asymmetric_game())
        np.testing.assert_allclose(res.values, [1.5, 0.5], atol=1e-15)

    def test_matches_literal_oracle(self):
        rng = np.random.default_rng(7)
        game = random_game(rng, 5)
        oracle = permutation_scan_oracle(game.players, game._utility)
        np.testing.assert_allclose(exact_shapley_permutation(game).values, oracle, atol=1e-12)
        np.testing.assert_allclose(exact_shapley_subset(game).values, oracle, atol=1e-12)

    def test_null_player_added(self):
        # player 3 never changes the utility
        base = {frozenset({1}): 1.0, frozenset({1, 2}): 2.0}
        table = dict(base)
        for s, v in base.items():
            table[s | {3}] = v
        res = exact_shapley_subset(make_table_game(table, (1, 2, 3)))
        assert res.values[2] == 0.0

    def test_player_limits(self):
        big = CoalitionGame(range(17), lambda s: len(s))
        with pytest.raises(PlayerLimitExceeded):
            exact_shapley_subset(big)
        with pytest.raises(PlayerLimitExceeded):
            exact_shapley_permutation(CoalitionGame(range(11), lambda s: len(s)))

    @pytest.mark.parametrize("m", [1, 2, 3, 4, 5, 6])
    def test_formulations_agree(self, m):
        rng = np.random.default_rng(100 + m)
        game = random_game(rng, m)
        a = exact_shapley_permutation(game).values
        b = exact_shapley_subset(game).values
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestAxioms:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=2**31))
    def test_efficiency(self, m, seed):
        game = random_game(np.random.default_rng(seed), m)
        res = exact_shapley_subset(game)
        grand = game.utility_of_mask((1 << m) - 1)
        assert abs(res.values.sum() - grand) < 1e-9

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=2, max_value=6), st.integers(min_value=0, max_value=2**31))
    def test_symmetry(self, m, seed):
        # players 0 and 1 share a "type": v depends only on the type multiset
        rng = np.random.default_rng(seed)
        values = {}

        def utility(subset):
            key = (min(2, sum(1 for p in subset if p in (0, 1))),
                   frozenset(p for p in subset if p not in (0, 1)))
            if key not in values:
                values[key] = float(rng.random())
            return values[key]

        res = exact_shapley_subset(CoalitionGame(range(m), utility))
        assert abs(res.values[0] - res.values[1]) < 1e-12

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=2, max_value=6), st.integers(min_value=0, max_value=2**31))
    def test_null_player(self, m, seed):
        rng = np.random.default_rng(seed)
        base = {}

        def utility(subset):
            key = frozenset(p for p in subset if p != 0)
            if not key:
                return 0.0
            if key not in base:
                base[key] = float(rng.random())
            return base[key]

        res = exact_shapley_subset(CoalitionGame(range(m), utility))
        assert res.values[0] == 0.0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=2**31))
    def test_linearity(self, m, seed):
        rng = np.random.default_rng(seed)
        g1 = random_game(rng, m)
        g2 = random_game(rng, m)
        a, b = 2.5, -0.75
        combined = CoalitionGame(
            g1.players, lambda s: a * g1._utility(s) + b * g2._utility(s)
        )
        lhs = exact_shapley_subset(combined).values
        rhs = a * exact_shapley_subset(g1).values + b * exact_shapley_subset(g2).values
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


class TestMonteCarlo:
    def test_single_player(self):
        game = make_table_game({frozenset({9}): 0.7}, (9,))
        for r in (1, 5):
            res = monte_carlo_shapley(game, r, np.random.default_rng(0))
            np.testing.assert_allclose(res.values, [0.7])

    def test_close_to_exact(self):
        exact = exact_shapley_permutation(two_player_split()).values
        for seed in range(5):
            res = monte_carlo_shapley(two_player_split(), 1000, np.random.default_rng(seed))
            assert np.all(np.abs(res.values - exact) < 0.1)

    def test_deterministic_per_seed(self):
        game = random_game(np.random.default_rng(3), 5)
        a = monte_carlo_shapley(game, 15, np.random.default_rng(42))
        b = monte_carlo_shapley(game, 15, np.random.default_rng(42))
        assert np.array_equal(a.values, b.values)
        assert a.samples_used == b.samples_used == 15

    def test_unbiased_over_seeds(self):
        game = random_game(np.random.default_rng(11), 5)
        exact = exact_shapley_permutation(game).values
        estimates = np.array(
            [monte_carlo_shapley(game, 15, np.random.default_rng(s)).values for s in range(200)]
        )
        err = estimates.mean(axis=0) - exact
        stderr = estimates.std(axis=0, ddof=1) / np.sqrt(len(estimates))
        assert np.all(np.abs(err) <= 3 * np.maximum(stderr, 1e-12))

    def test_sample_count_validation(self):
        with pytest.raises(ValueError):
            monte_carlo_shapley(two_player_split(), 0, np.random.default_rng(0))


class TestCacheAccounting:
    def test_fresh_game(self):
        assert two_player_split().utility_eval_count() == 0

    def test_subset_eval_bound(self):
        game = random_game(np.random.default_rng(0), 3)
        exact_shapley_subset(game)
        assert game.utility_eval_count() == 7  # every nonempty subset, empty never computed

    def test_monte_carlo_eval_bound(self):
        m = 6
        r = 3 * m
        game = random_game(np.random.default_rng(1), m)
        monte_carlo_shapley(game, r, np.random.default_rng(2))
        assert game.utility_eval_count() <= min(2**m, r * m + 1)

    def test_result_counts_only_new_evaluations(self):
        game = random_game(np.random.default_rng(4), 4)
        first = exact_shapley_subset(game)
        second = exact_shapley_subset(game)
        assert first.utility_evaluations == 15
        assert second.utility_evaluations == 0

    def test_empty_subset_never_forwarded(self):
        seen = []

        def spy(subset):
            seen.append(subset)
            return float(len(subset))

        game = CoalitionGame((1, 2, 3), spy)
        exact_shapley_permutation(game)
        exact_shapley_subset(game)
        monte_carlo_shapley(game, 10, np.random.default_rng(0))
        assert all(len(s) > 0 for s in seen)

    def test_repeat_evaluations_bit_identical(self):
        game = random_game(np.random.default_rng(5), 4)
        v1 = game.value((0, 2))
        v2 = game.value((2, 0))
        assert v1 == v2

    def test_concurrent_evaluation_computes_each_subset_once(self):
        calls = []
        lock = threading.Lock()

        def slow_utility(subset):
            with lock:
                calls.append(subset)
            time.sleep(0.001)
            return float(len(subset))

        game = CoalitionGame(range(6), slow_utility)
        masks = list(range(1, 1 << 6)) * 4
        with ThreadPoolExecutor(max_workers=8) as pool:
            results = list(pool.map(game.utility_of_mask, masks))
        assert len(calls) == (1 << 6) - 1
        assert game.utility_eval_count() == (1 << 6) - 1
        # same mask always produced the same value
        by_mask = {}
        for mask, val in zip(masks, results):
            by_mask.setdefault(mask, val)
            assert by_mask[mask] == val

    def test_cache_dump(self, tmp_path):
        game = random_game(np.random.default_rng(6), 3)
        exact_shapley_subset(game)
        out = tmp_path / "cache.csv"
        game.dump_cache_csv(out)
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "bitmask,utility"
        assert len(lines) == 1 + 7


def test_duplicate_players_rejected():
    with pytest.raises(ValueError):
        CoalitionGame((1, 1), lambda s: 0.0)


def test_mask_limit():
    with pytest.raises(PlayerLimitExceeded):
        CoalitionGame(range(64), lambda s: 0.0)
