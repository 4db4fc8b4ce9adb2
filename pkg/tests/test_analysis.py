import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abduce.analysis import (
    DEFAULT_BOOTSTRAP_ITERS,
    diversity_report,
    embedding_diversity,
    fleiss_kappa,
    length_stats,
    ngram_entropy,
)


class TestLengthStats:
    def test_constant_lengths(self):
        assert length_stats([(1, 2), (3, 4), (5, 6)]) == (2.0, 0.0)

    def test_population_std(self):
        mean, std = length_stats([(1,), (1, 2, 3)])
        assert (mean, std) == (2.0, 1.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            length_stats([])


class TestNgramEntropy:
    def test_single_distinct_ngram_is_zero(self):
        groups = [[(7, 7, 7)], [(7, 7)]]
        assert ngram_entropy(groups, n=1, bootstrap_iters=3, seed=0) == 0.0

    def test_all_distinct_uniform_is_one(self):
        groups = [[(1, 2)], [(3, 4)], [(5, 6)]]
        assert ngram_entropy(groups, n=2, bootstrap_iters=5, seed=0) == 1.0

    def test_hand_computed_value(self):
        # Groups [a,b] and [a,c]: pooled unigrams {a:2, b:1, c:1};
        # H = 1.5 bits, normalized by log2(3).
        groups = [[(0, 1)], [(0, 2)]]
        got = ngram_entropy(groups, n=1, bootstrap_iters=1, seed=0)
        assert got == pytest.approx(1.5 / math.log2(3), abs=1e-12)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(0)
        groups = [
            [tuple(rng.integers(0, 5, size=4)) for _ in range(3)] for _ in range(6)
        ]
        a = ngram_entropy(groups, n=2, bootstrap_iters=40, seed=9)
        b = ngram_entropy(groups, n=2, bootstrap_iters=40, seed=9)
        assert a == b

    def test_relabeling_invariance(self):
        groups = [[(0, 1, 0)], [(2, 0, 1)], [(1, 1, 2)]]
        relabeled = [[tuple(t + 100 for t in seq) for seq in g] for g in groups]
        for n in (1, 2, 3):
            assert ngram_entropy(groups, n, bootstrap_iters=7, seed=3) == pytest.approx(
                ngram_entropy(relabeled, n, bootstrap_iters=7, seed=3), abs=1e-15
            )

    def test_default_iterations(self):
        assert DEFAULT_BOOTSTRAP_ITERS == 1000
        import inspect

        sig = inspect.signature(ngram_entropy)
        assert sig.parameters["bootstrap_iters"].default == 1000

    def test_empty_group_rejected(self):
        with pytest.raises(ValueError):
            ngram_entropy([[(1,)], []], n=1)

    def test_singleton_groups_have_no_sampling_variance(self):
        groups = [[(0, 1, 2)], [(2, 1)], [(0, 2)]]
        for n in (1, 2):
            a = ngram_entropy(groups, n, bootstrap_iters=1, seed=0)
            b = ngram_entropy(groups, n, bootstrap_iters=17, seed=123)
            assert a == pytest.approx(b, abs=1e-15)


class TestEmbeddingDiversity:
    def test_identical_pair_zero(self):
        mean, std = embedding_diversity([(1, 2, 3), (1, 2, 3)])
        assert mean == 0.0 and std == 0.0

    def test_disjoint_ngrams_orthogonal(self):
        mean, std = embedding_diversity([(1, 1), (2, 2)])
        assert mean == pytest.approx(math.sqrt(2.0), abs=1e-12)

    def test_three_sequences_hand_computed(self):
        seqs = [(1,), (2,), (1, 2)]
        # Basis: 1-grams (1,), (2,), 2-gram (1,2).
        v1 = np.array([1.0, 0.0, 0.0])
        v2 = np.array([0.0, 1.0, 0.0])
        v3 = np.array([1.0, 1.0, 1.0]) / math.sqrt(3.0)
        want = [
            np.linalg.norm(v1 - v2),
            np.linalg.norm(v1 - v3),
            np.linalg.norm(v2 - v3),
        ]
        mean, std = embedding_diversity(seqs)
        assert mean == pytest.approx(np.mean(want), abs=1e-12)
        assert std == pytest.approx(np.std(want), abs=1e-12)

    def test_needs_two(self):
        with pytest.raises(ValueError):
            embedding_diversity([(1,)])

    def test_zero_iff_identical_count_vectors(self):
        # Same bag of 1-grams and 2-grams without being the same sequence
        # is impossible for these inputs, so mean 0 implies equality here.
        mean, _ = embedding_diversity([(1, 2), (2, 1)])
        assert mean > 0.0


class TestFleissKappa:
    def test_perfect_agreement(self):
        assert fleiss_kappa([[3, 0], [0, 3], [3, 0]]) == 1.0

    def test_single_category_degenerate_convention(self):
        assert fleiss_kappa([[3, 0], [3, 0]]) == 1.0

    def test_hand_computed_negative(self):
        got = fleiss_kappa([[2, 1], [1, 2]])
        assert got == pytest.approx(-1 / 3, abs=1e-9)

    def test_unequal_rater_counts_rejected(self):
        with pytest.raises(ValueError):
            fleiss_kappa([[2, 1], [2, 2]])

    def test_moving_vote_off_modal_category_decreases(self):
        base = [[4, 1, 0], [3, 2, 0], [0, 1, 4]]
        worse = [[3, 2, 0], [3, 2, 0], [0, 1, 4]]
        assert fleiss_kappa(worse) < fleiss_kappa(base)

    def test_needs_two_raters(self):
        with pytest.raises(ValueError):
            fleiss_kappa([[1, 0]])


class TestDiversityReport:
    def test_fields_populated(self):
        groups = [[(0, 1, 2), (2, 1)], [(3, 4)], [(0, 2)]]
        report = diversity_report(groups, bootstrap_iters=5, seed=0)
        assert report.mean_len > 0
        assert set(report.entropy_by_n) == {1, 2, 3, 4, 5}
        assert all(0.0 <= v <= 1.0 for v in report.entropy_by_n.values())
        assert report.kappa is None
