import itertools
import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memsearch.selection import (
    HashedEmbeddingProvider,
    RandomSource,
    SelectionError,
    facility_location_select,
    kmeans_representatives,
    rotating_subset,
    sample_failed_cases,
    softmax_probabilities,
    softmax_select,
)


@dataclass
class FakeCase:
    name: str
    score: float


class FixtureProvider:
    """Embeddings read from a lookup table; rows are L2-normalized."""

    def __init__(self, table: dict[str, list[float]]):
        self.table = table
        self.dimension = len(next(iter(table.values())))

    def embed(self, texts):
        rows = np.array([self.table[text] for text in texts], dtype=np.float64)
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
        return rows / norms


class TestRandomSource:
    def test_identical_seeds_identical_draws(self):
        a = RandomSource(7)
        b = RandomSource(7)
        assert [a.random() for _ in range(10)] == [b.random() for _ in range(10)]

    def test_derive_streams_are_stable_and_distinct(self):
        first = RandomSource.derive(0, "select", 3)
        again = RandomSource.derive(0, "select", 3)
        other = RandomSource.derive(0, "select", 4)
        assert first.random() == again.random()
        assert first.seed != other.seed


class TestSoftmax:
    def test_uniform_when_scores_equal(self):
        probabilities = softmax_probabilities([("a", 0.4), ("b", 0.4), ("c", 0.4)], 0.15)
        assert probabilities == pytest.approx([1 / 3] * 3, abs=1e-12)

    def test_closed_form_pair(self):
        # scores {0.5, 0.3} at tau 0.15: p1 = 1 / (1 + e^(-4/3)).
        probabilities = softmax_probabilities([("a", 0.5), ("b", 0.3)], 0.15)
        expected = 1.0 / (1.0 + math.exp(-(0.2 / 0.15)))
        assert probabilities[0] == pytest.approx(expected, abs=1e-12)
        assert probabilities[1] == pytest.approx(1 - expected, abs=1e-12)

    def test_low_temperature_concentrates_on_argmax(self):
        probabilities = softmax_probabilities([("a", 0.31), ("b", 0.30), ("c", 0.29)], 1e-6)
        assert probabilities[0] >= 1 - 1e-9

    def test_probabilities_sum_to_one(self):
        probabilities = softmax_probabilities([(i, i / 17) for i in range(17)], 0.15)
        assert abs(math.fsum(probabilities) - 1.0) < 1e-12

    def test_shift_invariance(self):
        scores = [(i, value) for i, value in enumerate([0.12, 0.57, 0.33, 0.90])]
        shifted = [(i, value + 0.25) for i, value in scores]
        base = softmax_probabilities(scores, 0.15)
        moved = softmax_probabilities(shifted, 0.15)
        assert all(abs(x - y) < 1e-12 for x, y in zip(base, moved))

    def test_empty_and_nonfinite_errors(self):
        with pytest.raises(SelectionError):
            softmax_probabilities([], 0.15)
        with pytest.raises(SelectionError):
            softmax_probabilities([("a", float("nan"))], 0.15)
        with pytest.raises(SelectionError):
            softmax_probabilities([("a", 0.5)], 0.0)

    def test_select_matches_distribution_roughly(self):
        scores = [("a", 0.9), ("b", 0.1)]
        rng = RandomSource(3)
        draws = [softmax_select(scores, 0.15, rng) for _ in range(2000)]
        frequency = draws.count("a") / len(draws)
        expected = softmax_probabilities(scores, 0.15)[0]
        assert abs(frequency - expected) < 0.05

    def test_select_deterministic_with_seed(self):
        scores = [("a", 0.2), ("b", 0.6), ("c", 0.4)]
        first = [softmax_select(scores, 0.15, RandomSource(11)) for _ in range(5)]
        second = [softmax_select(scores, 0.15, RandomSource(11)) for _ in range(5)]
        assert first == second


class TestSampleFailedCases:
    def test_only_positive_weight_selected(self):
        cases = [FakeCase("bad", 0.0), FakeCase("good1", 1.0), FakeCase("good2", 1.0)]
        for trial in range(50):
            picked = sample_failed_cases(cases, 2, RandomSource(trial))
            assert picked == [cases[0]]

    def test_all_perfect_returns_empty(self):
        cases = [FakeCase("a", 1.0), FakeCase("b", 1.0)]
        assert sample_failed_cases(cases, 2, RandomSource(0)) == []

    def test_fixed_seed_determinism(self):
        cases = [FakeCase(f"c{i}", 0.5) for i in range(6)]
        first = [c.name for c in sample_failed_cases(cases, 3, RandomSource(9))]
        second = [c.name for c in sample_failed_cases(cases, 3, RandomSource(9))]
        assert first == second

    def test_sampling_without_replacement(self):
        cases = [FakeCase(f"c{i}", 0.2) for i in range(5)]
        picked = sample_failed_cases(cases, 5, RandomSource(1))
        assert len({c.name for c in picked}) == 5

    def test_equal_weight_inclusion_frequency(self):
        # Inclusion probability of each of 5 equal-weight cases when picking
        # 2 without replacement is exactly 2/5; binomial 3-sigma bound.
        cases = [FakeCase(f"c{i}", 0.5) for i in range(5)]
        trials = 4000
        counts = {c.name: 0 for c in cases}
        for trial in range(trials):
            for picked in sample_failed_cases(cases, 2, RandomSource.derive(5, "t", trial)):
                counts[picked.name] += 1
        p = 2 / 5
        sigma = math.sqrt(trials * p * (1 - p))
        for name, count in counts.items():
            assert abs(count - trials * p) <= 3 * sigma, (name, count)

    def test_support_invariant_under_weight_power(self):
        # Raising every weight to the same positive power must not change
        # which cases are selectable (positive weights stay positive).
        base = [FakeCase("a", 0.3), FakeCase("b", 1.0), FakeCase("c", 0.7)]
        powered = [FakeCase(c.name, 1.0 - (1.0 - c.score) ** 2) for c in base]
        for seed in range(30):
            support_base = {c.name for c in sample_failed_cases(base, 3, RandomSource(seed))}
            support_pow = {c.name for c in sample_failed_cases(powered, 3, RandomSource(seed))}
            assert support_base == support_pow == {"a", "c"}

    def test_m_must_be_positive(self):
        with pytest.raises(SelectionError):
            sample_failed_cases([FakeCase("a", 0.0)], 0, RandomSource(0))


class TestKmeans:
    def test_n_equals_item_count_returns_all(self, provider=None):
        provider = HashedEmbeddingProvider(16)
        items = [(i, f"text number {i}") for i in range(6)]
        picked = kmeans_representatives(items, 6, provider, seed=0)
        assert sorted(picked) == list(range(6))

    def test_n_one_returns_nearest_to_global_mean(self):
        table = {
            "a": [1.0, 0.0],
            "b": [0.8, 0.6],
            "c": [0.0, 1.0],
        }
        provider = FixtureProvider(table)
        items = [("a", "a"), ("b", "b"), ("c", "c")]
        picked = kmeans_representatives(items, 1, provider, seed=3)
        vectors = provider.embed(["a", "b", "c"])
        mean = vectors.mean(axis=0)
        expected = ["a", "b", "c"][int(np.argmin(np.linalg.norm(vectors - mean, axis=1)))]
        assert picked == [expected]

    def test_two_separated_clusters(self):
        table = {
            "l1": [1.0, 0.02], "l2": [1.0, -0.02], "l3": [0.98, 0.0],
            "r1": [-1.0, 0.02], "r2": [-1.0, -0.02], "r3": [-0.98, 0.0],
        }
        provider = FixtureProvider(table)
        items = [(name, name) for name in table]
        picked = kmeans_representatives(items, 2, provider, seed=5)
        sides = {name[0] for name in picked}
        assert sides == {"l", "r"}
        # Exhaustive check: each representative is its cluster's nearest point
        # to the cluster centroid.
        vectors = provider.embed(list(table))
        names = list(table)
        left = [i for i, name in enumerate(names) if name[0] == "l"]
        right = [i for i, name in enumerate(names) if name[0] == "r"]
        for members in (left, right):
            centroid = vectors[members].mean(axis=0)
            nearest = names[members[int(np.argmin(np.linalg.norm(vectors[members] - centroid, axis=1)))]]
            assert nearest in picked

    def test_deterministic_given_seed(self):
        provider = HashedEmbeddingProvider(32)
        items = [(i, f"sample item {i} about topic {i % 4}") for i in range(20)]
        assert kmeans_representatives(items, 5, provider, 9) == kmeans_representatives(
            items, 5, provider, 9
        )

    def test_distinct_output_ids(self):
        provider = HashedEmbeddingProvider(32)
        items = [(i, f"entry {i} kind {i % 3}") for i in range(15)]
        picked = kmeans_representatives(items, 7, provider, 2)
        assert len(picked) == len(set(picked)) == 7

    def test_n_too_large_errors(self):
        provider = HashedEmbeddingProvider(16)
        with pytest.raises(SelectionError):
            kmeans_representatives([(0, "x")], 2, provider, 0)


class TestRotatingSubset:
    def test_same_iteration_identical(self):
        provider = HashedEmbeddingProvider(32)
        pool = [(i, f"pool question {i} theme {i % 5}") for i in range(40)]
        once = rotating_subset(pool, 5, iteration=3, provider=provider, base_seed=1)
        again = rotating_subset(pool, 5, iteration=3, provider=provider, base_seed=1)
        assert once == again

    def test_sizes_fixed_across_iterations(self):
        provider = HashedEmbeddingProvider(32)
        pool = [(i, f"pool question {i} theme {i % 7}") for i in range(40)]
        first = rotating_subset(pool, 5, iteration=1, provider=provider, base_seed=1)
        second = rotating_subset(pool, 5, iteration=2, provider=provider, base_seed=1)
        assert len(first) == len(second) == 5


def brute_force_optimum(sims: np.ndarray, m: int) -> float:
    best = -math.inf
    for subset in itertools.combinations(range(sims.shape[1]), m):
        best = max(best, float(sims[:, list(subset)].max(axis=1).sum()))
    return best


class TestFacilityLocation:
    def test_m_equals_episode_count(self):
        provider = HashedEmbeddingProvider(16)
        episodes = [(i, f"episode {i}") for i in range(4)]
        picked = facility_location_select(episodes, ["q one", "q two"], 4, provider)
        assert sorted(picked) == [0, 1, 2, 3]

    def test_identical_episode_dominates(self):
        table = {
            "target": [1.0, 0.0, 0.0],
            "other1": [0.0, 1.0, 0.0],
            "other2": [0.0, 0.0, 1.0],
            "validation": [1.0, 0.0, 0.0],
        }
        provider = FixtureProvider(table)
        episodes = [("t", "target"), ("o1", "other1"), ("o2", "other2")]
        picked = facility_location_select(episodes, ["validation"], 1, provider)
        assert picked == ["t"]

    def test_greedy_meets_submodular_bound(self):
        rng = np.random.RandomState(42)
        for trial in range(25):
            n_episodes = rng.randint(4, 10)
            n_validation = rng.randint(2, 6)
            m = rng.randint(1, min(4, n_episodes) + 1)
            table = {}
            for i in range(n_episodes):
                table[f"e{i}"] = rng.randn(8).tolist()
            for j in range(n_validation):
                table[f"v{j}"] = rng.randn(8).tolist()
            provider = FixtureProvider(table)
            episodes = [(f"e{i}", f"e{i}") for i in range(n_episodes)]
            validation = [f"v{j}" for j in range(n_validation)]
            picked = facility_location_select(episodes, validation, m, provider)

            episode_vectors = provider.embed([text for _, text in episodes])
            validation_vectors = provider.embed(validation)
            # Shift by the cosine floor so the objective is non-negative
            # monotone; the greedy bound is stated for that form.
            sims = validation_vectors @ episode_vectors.T + 1.0
            indices = [int(name[1:]) for name in picked]
            achieved = float(sims[:, indices].max(axis=1).sum())
            optimum = brute_force_optimum(sims, m)
            assert achieved >= (1 - 1 / math.e) * optimum - 1e-9

    def test_marginal_gains_non_increasing(self):
        provider = HashedEmbeddingProvider(32)
        episodes = [(i, f"episode text {i} flavor {i % 5}") for i in range(10)]
        validation = [f"validation question {j}" for j in range(6)]
        picked = facility_location_select(episodes, validation, 5, provider)

        episode_vectors = provider.embed([text for _, text in episodes])
        validation_vectors = provider.embed(validation)
        sims = validation_vectors @ episode_vectors.T
        best = np.full(len(validation), -1.0)  # coverage floor, as in the selector
        gains = []
        for ident in picked:
            merged = np.maximum(best, sims[:, ident])
            gains.append(float(merged.sum() - best.sum()))
            best = merged
        assert all(gains[i] >= gains[i + 1] - 1e-12 for i in range(len(gains) - 1))

    def test_errors(self):
        provider = HashedEmbeddingProvider(16)
        with pytest.raises(SelectionError):
            facility_location_select([(0, "x")], ["v"], 2, provider)
        with pytest.raises(SelectionError):
            facility_location_select([(0, "x")], [], 1, provider)


class TestHashedProvider:
    def test_unit_norm(self):
        provider = HashedEmbeddingProvider(64)
        vectors = provider.embed(["hello world", "", "a b c d"])
        norms = np.linalg.norm(vectors, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-9)

    def test_output_count_matches_input(self):
        provider = HashedEmbeddingProvider(8)
        assert provider.embed(["x", "y", "z"]).shape == (3, 8)

    def test_pure(self):
        provider = HashedEmbeddingProvider(16)
        assert np.array_equal(provider.embed(["same text"]), provider.embed(["same text"]))

    @given(st.lists(st.text(max_size=20), min_size=1, max_size=5))
    @settings(max_examples=30, deadline=None)
    def test_norm_property(self, texts):
        provider = HashedEmbeddingProvider(16)
        norms = np.linalg.norm(provider.embed(texts), axis=1)
        assert np.allclose(norms, 1.0, atol=1e-9)
