import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tupleworks import (
    BlockPartition,
    DesignError,
    DesignKind,
    FactorSpace,
    assign_bernoulli_factors,
    assign_factor_specific_mp,
    assign_matched_tuples,
    assign_replicate_tuples,
    assign_rerandomized,
    assign_stratified,
    mahalanobis_balance,
)
from tupleworks.assign import factorial_generating_rows, rerandomization_thresholds
from tupleworks.inference import chi2_quantile


def consecutive(n_blocks, size):
    return BlockPartition(np.arange(n_blocks * size).reshape(n_blocks, size))


def permutation_frequencies(draws):
    counts = Counter(draws)
    total = sum(counts.values())
    return {k: v / total for k, v in counts.items()}


class TestMatchedTuples:
    def test_single_arm(self):
        plan = assign_matched_tuples(consecutive(5, 1), 1, seed=3)
        assert np.all(plan.arms == 1)

    def test_first_unit_share(self):
        plan = assign_matched_tuples(consecutive(10_000, 2), 2, seed=11)
        share = np.mean(plan.arms[0::2] == 1)
        assert abs(share - 0.5) < 0.02

    def test_permutations_uniform(self):
        # one plan with 6000 blocks gives 6000 independent per-block draws
        plan = assign_matched_tuples(consecutive(6000, 3), 3, seed=5)
        freq = permutation_frequencies(map(tuple, plan.arms.reshape(-1, 3)))
        assert set(freq) == set(itertools.permutations((1, 2, 3)))
        for f in freq.values():
            assert abs(f - 1 / 6) < 0.02

    def test_fresh_seeds_single_block(self):
        draws = [tuple(assign_matched_tuples(consecutive(1, 3), 3, seed=s).arms) for s in range(6000)]
        for f in permutation_frequencies(draws).values():
            assert abs(f - 1 / 6) < 0.02

    def test_marginal_law_any_block_layout(self, rng):
        members = rng.permutation(4 * 3000).reshape(3000, 4)
        plan = assign_matched_tuples(BlockPartition(members), 4, seed=9)
        for col in range(4):
            shares = np.bincount(plan.arms[members[:, col]], minlength=5)[1:] / 3000
            assert np.all(np.abs(shares - 0.25) < 0.03)

    def test_size_mismatch(self):
        with pytest.raises(DesignError):
            assign_matched_tuples(consecutive(2, 3), 2, seed=1)

    def test_deterministic(self):
        part = consecutive(50, 4)
        a = assign_matched_tuples(part, 4, seed=42)
        b = assign_matched_tuples(part, 4, seed=42)
        c = assign_matched_tuples(part, 4, seed=43)
        np.testing.assert_array_equal(a.arms, b.arms)
        assert not np.array_equal(a.arms, c.arms)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 40), st.integers(1, 6), st.integers(0, 2**32))
    def test_each_arm_once_per_block(self, n_blocks, D, seed):
        members = np.random.default_rng(seed).permutation(n_blocks * D).reshape(n_blocks, D)
        plan = assign_matched_tuples(BlockPartition(members), D, seed)
        for row in members:
            assert sorted(plan.arms[row]) == list(range(1, D + 1))


class TestReplicateTuples:
    def test_single_arm(self):
        assert np.all(assign_replicate_tuples(consecutive(3, 2), 1, seed=0).arms == 1)

    def test_counts_and_arrangements(self):
        plan = assign_replicate_tuples(consecutive(6000, 4), 2, seed=8)
        rows = plan.arms.reshape(-1, 4)
        assert np.all((rows == 1).sum(axis=1) == 2)
        freq = permutation_frequencies(map(tuple, rows))
        assert len(freq) == 6
        for f in freq.values():
            assert abs(f - 1 / 6) < 0.02

    def test_size_mismatch(self):
        with pytest.raises(DesignError):
            assign_replicate_tuples(consecutive(2, 2), 2, seed=1)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 30), st.integers(1, 5), st.integers(0, 2**32))
    def test_each_arm_twice(self, n_blocks, D, seed):
        plan = assign_replicate_tuples(consecutive(n_blocks, 2 * D), D, seed)
        for row in plan.arms.reshape(-1, 2 * D):
            assert np.all(np.bincount(row, minlength=D + 1)[1:] == 2)


class TestStratified:
    def test_complete_randomization(self):
        plan = assign_stratified(np.zeros(400), 4, seed=1)
        assert np.all(np.bincount(plan.arms)[1:] == 100)

    def test_remainder_rule(self):
        seen = Counter()
        for seed in range(400):
            counts = np.bincount(assign_stratified(np.zeros(5), 4, seed).arms, minlength=5)[1:]
            assert sorted(counts) == [1, 1, 1, 2]
            seen[int(np.argmax(counts))] += 1
        # the extra unit lands on every arm with roughly equal frequency
        assert all(60 < v < 140 for v in seen.values()) and len(seen) == 4

    def test_median_split_is_large2(self, rng):
        x = rng.normal(size=200)
        labels = (x > np.median(x)).astype(int)
        plan = assign_stratified(labels, 4, seed=2)
        assert plan.metadata["n_strata"] == 2
        for s in (0, 1):
            assert np.all(np.bincount(plan.arms[labels == s])[1:] == 25)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(0, 4), min_size=1, max_size=60), st.integers(1, 5), st.integers(0, 2**32))
    def test_counts_differ_by_at_most_one(self, labels, D, seed):
        labels = np.array(labels)
        plan = assign_stratified(labels, D, seed)
        for s in np.unique(labels):
            counts = np.bincount(plan.arms[labels == s], minlength=D + 1)[1:]
            assert counts.max() - counts.min() <= 1


class TestBernoulli:
    def test_k1_share(self):
        plan = assign_bernoulli_factors(10_000, 1, seed=4)
        assert abs(np.mean(plan.arms == 2) - 0.5) < 0.02

    def test_k2_arm_shares(self):
        plan = assign_bernoulli_factors(10_000, 2, seed=4)
        shares = np.bincount(plan.arms, minlength=5)[1:] / 10_000
        assert np.all(np.abs(shares - 0.25) < 0.02)

    def test_k0_rejected(self):
        with pytest.raises(DesignError):
            assign_bernoulli_factors(10, 0, seed=1)


class TestFactorSpecificMP:
    def test_classic_pairs(self):
        part = consecutive(100, 2)
        plan = assign_factor_specific_mp(part, 1, 1, seed=3)
        rows = plan.arms.reshape(-1, 2)
        assert np.all(np.sort(rows, axis=1) == [1, 2])

    def test_other_factor_independent(self):
        part = consecutive(5000, 2)
        plan = assign_factor_specific_mp(part, 1, 2, seed=6)
        lv = FactorSpace(2).level_table[plan.arms - 1]
        f2 = lv[:, 1].reshape(-1, 2)
        corr = np.corrcoef(f2[:, 0], f2[:, 1])[0, 1]
        assert abs(corr) < 0.05
        assert np.sum(lv[:, 0] == 1) == 5000
        assert np.all(lv[:, 0].reshape(-1, 2).sum(axis=1) == 0)

    def test_errors(self):
        with pytest.raises(DesignError):
            assign_factor_specific_mp(consecutive(2, 2), 3, 2, seed=1)
        with pytest.raises(DesignError):
            assign_factor_specific_mp(consecutive(2, 4), 1, 2, seed=1)


class TestBalance:
    def test_equal_means(self):
        x = np.array([1.0, 2.0, 2.0, 1.0])
        assert mahalanobis_balance(x, [1, 1, 2, 2], [-1, 1]) == pytest.approx(0.0)

    def test_scalar_hand_value(self):
        # means 0 vs 1 and pooled sample variance exactly 1, so M = n/2
        n = 50
        N = 2 * n
        c = np.sqrt((N - 1) / N - 0.25)
        a = c * np.array([-1.0, 1.0] * (n // 2))
        x = np.concatenate([a, a + 1.0])
        assert np.var(x, ddof=1) == pytest.approx(1.0)
        m = mahalanobis_balance(x, np.repeat([1, 2], n), [-1, 1])
        assert m == pytest.approx(n / 2)

    def test_chi2_mean(self, rng):
        p = 3
        x = rng.normal(size=(200, p))
        vals = [
            mahalanobis_balance(x, assign_stratified(np.zeros(200), 2, seed).arms, [-1, 1])
            for seed in range(10_000)
        ]
        assert abs(np.mean(vals) - p) < 0.1 * p

    def test_errors(self):
        with pytest.raises(DesignError):
            mahalanobis_balance(np.zeros(4), [1, 2, 2, 2], [-1, 1])
        with pytest.raises(DesignError):
            mahalanobis_balance(np.zeros(4), [1, 1, 2, 2], [0, 1])


class TestRerandomized:
    def test_k1_acceptance_rate(self, rng):
        x = rng.normal(size=(200, 2))
        redraws = [assign_rerandomized(x, 1, seed).metadata["redraws"] for seed in range(150)]
        # redraw counts are geometric with success probability 0.01
        rate = len(redraws) / sum(redraws)
        assert 0.007 < rate < 0.014

    def test_k2_thresholds(self):
        main, inter, L = rerandomization_thresholds(2, 1)
        assert L == 1
        assert main == pytest.approx(chi2_quantile(0.1, 1))
        assert inter == pytest.approx(chi2_quantile(0.01, 1))

    @pytest.mark.parametrize("K", [1, 2, 3])
    def test_accepted_plan_passes_post_hoc(self, K, rng):
        x = rng.normal(size=(8 * 2**K, 2))
        plan = assign_rerandomized(x, K, seed=K)
        main_cut, inter_cut, _ = rerandomization_thresholds(K, 2)
        subsets, main_rows, inter_rows = factorial_generating_rows(K)
        assert np.all(np.bincount(plan.arms)[1:] == 8)
        for k, row in enumerate(main_rows):
            m = mahalanobis_balance(x, plan.arms, row)
            assert m < main_cut
            assert m == pytest.approx(plan.metadata["balance"][f"main:{k + 1}"])
        for s, row in zip(subsets, inter_rows):
            assert mahalanobis_balance(x, plan.arms, row) < inter_cut

    def test_deterministic(self, rng):
        x = rng.normal(size=(40, 1))
        a = assign_rerandomized(x, 2, seed=77)
        b = assign_rerandomized(x, 2, seed=77)
        np.testing.assert_array_equal(a.arms, b.arms)
        assert a.design_kind is DesignKind.RERANDOMIZED

    def test_failure_names_criterion(self):
        x = np.random.default_rng(0).normal(size=(40, 1))
        with pytest.raises(DesignError, match="tightest criterion: main:1"):
            assign_rerandomized(x, 1, seed=1, max_redraws=3)

    def test_indivisible(self):
        with pytest.raises(DesignError):
            assign_rerandomized(np.zeros((6, 1)), 2, seed=1)
