import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tupleworks import (
    BlockPartition,
    DesignError,
    Sample,
    block_by_ordering,
    block_prestratified,
    block_recursive_pairing,
    diagnose,
    exact_nonbipartite_match,
    greedy_nonbipartite_match,
)
from tupleworks.blocking import matching_cost

try:
    from tupleworks import _kernels  # noqa: F401

    HAVE_CYTHON = True
except ImportError:
    HAVE_CYTHON = False


def sample_of(x, ids=None):
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    return Sample(ids or [f"u{i}" for i in range(n)], x, 2)


def id_blocks(sample, part):
    return [sorted(sample.ids[i] for i in row) for row in part.members]


def brute_force_matching(points):
    """Minimum cost over every perfect matching, enumerated directly."""
    def matchings(items):
        if not items:
            yield []
            return
        a = items[0]
        for k in range(1, len(items)):
            rest = items[1:k] + items[k + 1:]
            for m in matchings(rest):
                yield [(a, items[k])] + m
    return min(matching_cost(points, m) for m in matchings(list(range(len(points)))))


class TestOrdering:
    def test_sorts_then_cuts(self):
        s = sample_of([3, 1, 4, 2], ids=["a", "b", "c", "d"])
        assert id_blocks(s, block_by_ordering(s, 2)) == [["b", "d"], ["a", "c"]]

    def test_ties_by_id(self):
        s = sample_of([0.0] * 4, ids=["d", "b", "a", "c"])
        part = block_by_ordering(s, 2)
        assert id_blocks(s, part) == [["a", "b"], ["c", "d"]]
        assert diagnose(s, part).within_stat == 0.0

    def test_optimal_among_all_partitions(self, rng):
        for _ in range(20):
            x = rng.uniform(size=8)
            s = sample_of(x)
            got = diagnose(s, block_by_ordering(s, 4)).within_stat
            stats = []
            for first in itertools.combinations(range(1, 8), 3):
                a = [0, *first]
                b = [i for i in range(8) if i not in a]
                stats.append(diagnose(s, BlockPartition.from_blocks([a, b])).within_stat)
            assert got <= min(stats) + 1e-15
            assert got < np.mean(stats)

    def test_row_order_invariance(self, rng):
        x = rng.normal(size=12).round(1)  # rounding creates ties
        ids = [f"u{i:02d}" for i in range(12)]
        s = sample_of(x, ids)
        perm = rng.permutation(12)
        s2 = sample_of(x[perm], [ids[i] for i in perm])
        assert id_blocks(s, block_by_ordering(s, 3)) == id_blocks(s2, block_by_ordering(s2, 3))

    def test_errors(self):
        s = sample_of([1, 2, 3])
        with pytest.raises(DesignError):
            block_by_ordering(s, 2)
        with pytest.raises(DesignError):
            block_by_ordering(s, 3, covariate_index=1)


class TestPrestratified:
    def test_single_stratum_reduces_to_ordering(self, rng):
        s = sample_of(rng.normal(size=8))
        sub, part = block_prestratified(s, np.zeros(8), 4)
        np.testing.assert_array_equal(part.members, block_by_ordering(s, 4).members)
        assert sub.dropped_ids == ()

    def test_drop_rule(self):
        x = [5.0, 1.0, 3.0, 2.0, 4.0, 10.0, 12.0, 11.0, 13.0]
        labels = [0, 0, 0, 0, 0, 1, 1, 1, 1]
        s = sample_of(x)
        sub, part = block_prestratified(s, labels, 4)
        assert part.n_blocks == 2
        # the largest covariate of the 5-unit stratum is the boundary unit dropped
        assert sub.dropped_ids == ("u0",)
        assert sub.n_units == 8

    def test_no_block_straddles_strata(self, rng):
        x = rng.integers(0, 3, size=30).astype(float)
        labels = rng.integers(0, 3, size=30)
        sub, part = block_prestratified(sample_of(x), labels, 2)
        kept = {uid: labels[int(uid[1:])] for uid in sub.ids}
        for row in part.members:
            assert len({kept[sub.ids[i]] for i in row}) == 1


class TestMatching:
    def test_unique_nearest(self):
        pairs = greedy_nonbipartite_match([[0.0], [10.0], [0.1], [9.9]])
        assert {frozenset(p) for p in pairs} == {frozenset((0, 2)), frozenset((1, 3))}

    def test_two_points(self):
        assert greedy_nonbipartite_match([[1.0, 2.0], [3.0, 4.0]]) == [(0, 1)]
        assert exact_nonbipartite_match([[1.0], [2.0]]) == [(0, 1)]

    def test_odd_rejected(self):
        with pytest.raises(DesignError):
            greedy_nonbipartite_match(np.zeros((3, 1)))
        with pytest.raises(DesignError):
            exact_nonbipartite_match(np.zeros((16, 1)))

    def test_adversarial_instance(self):
        pts = np.array([[0.0], [1.0], [1.1], [2.2], [10.0], [11.0]])
        g = matching_cost(pts, greedy_nonbipartite_match(pts))
        e = matching_cost(pts, exact_nonbipartite_match(pts))
        assert g == pytest.approx(5.85)
        assert e == pytest.approx(3.21)

    def test_exact_matches_brute_force(self, rng):
        for _ in range(10):
            pts = rng.normal(size=(6, 2))
            assert matching_cost(pts, exact_nonbipartite_match(pts)) == pytest.approx(brute_force_matching(pts))

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.tuples(st.sampled_from([2, 4, 6, 8]), st.integers(1, 3)),
                  elements=st.floats(-100, 100, allow_nan=False)))
    def test_greedy_never_beats_exact(self, pts):
        for pairs in (greedy_nonbipartite_match(pts), exact_nonbipartite_match(pts)):
            assert sorted(i for p in pairs for i in p) == list(range(pts.shape[0]))
        g = matching_cost(pts, greedy_nonbipartite_match(pts))
        e = matching_cost(pts, exact_nonbipartite_match(pts))
        assert g >= e - 1e-9 * max(1.0, e)


class TestRecursivePairing:
    @pytest.mark.parametrize("m", [2, 4, 6, 8])
    def test_k1_equals_ordering(self, m, rng):
        for _ in range(25):
            s = sample_of(rng.normal(size=m))
            rec = block_recursive_pairing(s, 1, matcher="exact")
            assert id_blocks(s, rec) == id_blocks(s, block_by_ordering(s, 2))

    def test_k2_merges_nearest_clusters(self):
        centers = [0.0, 1.0, 10.0, 11.0]
        x = np.array([c + e for c in centers for e in (-0.01, 0.01)])
        perm = np.array([5, 0, 7, 2, 4, 1, 6, 3])
        s = sample_of(x[perm])
        part = block_recursive_pairing(s, 2)
        groups = [sorted(x[perm][list(row)].round(0)) for row in part.members]
        assert groups == [[0, 0, 1, 1], [10, 10, 11, 11]]

    def test_duplicates_have_zero_within(self):
        x = np.repeat(np.arange(4.0), 4)[:, None] * np.ones((1, 2))
        s = sample_of(x)
        for K in (1, 2):
            assert diagnose(s, block_recursive_pairing(s, K)).within_stat == 0.0

    def test_block_order_by_first_covariate(self, rng):
        s = sample_of(rng.normal(size=(16, 3)))
        part = block_recursive_pairing(s, 2)
        means = [s.covariates[row, 0].mean() for row in part.members]
        assert means == sorted(means)

    def test_full_mahalanobis(self, rng):
        x = rng.normal(size=(16, 2))
        x = np.hstack([x, x[:, :1]])  # singular covariance
        part = block_recursive_pairing(sample_of(x), 2, mahalanobis="full")
        assert part.tuple_size == 4

    def test_errors(self):
        with pytest.raises(DesignError):
            block_recursive_pairing(sample_of(np.zeros(6)), 2)
        with pytest.raises(DesignError):
            block_recursive_pairing(sample_of(np.zeros(4)), 1, matcher="blossom")


class TestDiagnose:
    def test_identical(self):
        s = sample_of(np.ones(4))
        d = diagnose(s, block_by_ordering(s, 2))
        assert (d.within_stat, d.adjacent_stat) == (0.0, 0.0)

    def test_hand_values(self):
        s = sample_of([0.0, 1.0, 10.0, 12.0])
        d = diagnose(s, BlockPartition.from_blocks([[0, 1], [2, 3]]))
        assert d.within_stat == 2.5
        assert d.adjacent_stat == 72.0

    def test_single_block(self):
        s = sample_of([0.0, 3.0])
        d = diagnose(s, BlockPartition.from_blocks([[0, 1]]))
        assert (d.within_stat, d.adjacent_stat) == (9.0, 0.0)

    def test_refines_with_sample_size(self):
        def median_within(n, p):
            out = []
            for seed in range(50):
                x = np.random.default_rng(seed).uniform(size=(n, p))
                s = sample_of(x)
                out.append(diagnose(s, block_recursive_pairing(s, 1)).within_stat)
            return np.median(out)

        assert median_within(400, 2) < median_within(100, 2)


@pytest.mark.skipif(not HAVE_CYTHON, reason="compiled kernels not built")
class TestBackends:
    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 20).map(lambda k: 2 * k), st.integers(1, 3)),
                  elements=st.floats(-5, 5, allow_nan=False)))
    def test_greedy_bitwise(self, pts):
        assert greedy_nonbipartite_match(pts, backend="cython") == greedy_nonbipartite_match(pts, backend="python")

    def test_diagnose_bitwise(self, rng):
        s = sample_of(rng.normal(size=(40, 3)))
        part = block_recursive_pairing(s, 2)
        a = diagnose(s, part, backend="cython")
        b = diagnose(s, part, backend="python")
        assert a == b

    def test_recursive_bitwise(self, rng):
        s = sample_of(rng.normal(size=(64, 2)))
        a = block_recursive_pairing(s, 3, backend="cython")
        b = block_recursive_pairing(s, 3, backend="python")
        np.testing.assert_array_equal(a.members, b.members)
