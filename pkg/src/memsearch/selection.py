"""Stochastic selection and representative-subset procedures.

Softmax parent selection, weighted without-replacement case sampling,
k-means representative subsets, and greedy facility-location episode
selection, all deterministic given (inputs, seed) and all running over a
pluggable embedding provider.
"""

from __future__ import annotations

import hashlib
import math
import random
import re
from typing import Sequence

import numpy as np

KMEANS_MAX_ITERATIONS = 100

_TOKEN = re.compile(r"\w+")


class SelectionError(ValueError):
    pass


class RandomSource:
    """Seeded RNG wrapper; identical seeds yield identical draw sequences."""

    def __init__(self, seed: int):
        self.seed = seed
        self._rng = random.Random(seed)

    def random(self) -> float:
        return self._rng.random()

    def randrange(self, n: int) -> int:
        return self._rng.randrange(n)

    @staticmethod
    def derive(seed: int, *labels) -> "RandomSource":
        """Independent stream keyed by (seed, labels); stable across platforms."""
        key = "|".join([str(seed), *(str(label) for label in labels)])
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return RandomSource(int.from_bytes(digest[:8], "big"))


class EmbeddingProvider:
    """Maps texts to unit-norm vectors of a fixed dimension."""

    dimension: int

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        raise NotImplementedError


class HashedEmbeddingProvider(EmbeddingProvider):
    """Hashed bag-of-tokens embedding: pure, seed-free, offline.

    Each token hashes to one signed coordinate; rows are L2-normalized.
    Texts with no tokens map to a fixed unit vector.
    """

    def __init__(self, dimension: int = 64):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = dimension

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        vectors = np.zeros((len(texts), self.dimension), dtype=np.float64)
        for row, text in enumerate(texts):
            for token in _TOKEN.findall(text.lower()):
                digest = hashlib.md5(token.encode("utf-8")).digest()
                index = int.from_bytes(digest[:4], "big") % self.dimension
                sign = 1.0 if digest[4] % 2 == 0 else -1.0
                vectors[row, index] += sign
        norms = np.linalg.norm(vectors, axis=1)
        for row in np.flatnonzero(norms == 0.0):
            vectors[row, 0] = 1.0
            norms[row] = 1.0
        return vectors / norms[:, None]


def softmax_probabilities(scores: Sequence[tuple[object, float]], tau: float) -> list[float]:
    """Selection distribution exp(J_i/tau) / sum_j exp(J_j/tau).

    The max score is subtracted before exponentiation for stability, which
    also makes the distribution invariant to shifting all scores.
    """
    if not scores:
        raise SelectionError("empty score list")
    if not (tau > 0 and math.isfinite(tau)):
        raise SelectionError(f"temperature must be positive and finite, got {tau}")
    values = [value for _, value in scores]
    if any(not math.isfinite(value) for value in values):
        raise SelectionError("non-finite score in selection input")
    top = max(values)
    weights = [math.exp((value - top) / tau) for value in values]
    total = math.fsum(weights)
    return [weight / total for weight in weights]


def softmax_select(scores: Sequence[tuple[object, float]], tau: float, rng: RandomSource):
    """Draw one id from the softmax distribution over static scores."""
    probabilities = softmax_probabilities(scores, tau)
    draw = rng.random()
    acc = 0.0
    for (ident, _), probability in zip(scores, probabilities):
        acc += probability
        if draw < acc:
            return ident
    return scores[-1][0]


def sample_failed_cases(cases: Sequence, m: int, rng: RandomSource) -> list:
    """Weighted sampling without replacement with weight w = 1 - score.

    Keys u^(1/w) with u uniform in (0,1); the m largest keys win. Cases at
    weight zero (perfect score) are never selected while positive-weight
    cases remain; if all weights are zero the result is empty.
    """
    if m < 1:
        raise SelectionError("sample size must be >= 1")
    keyed = []
    for position, case in enumerate(cases):
        u = rng.random()  # drawn for every case so the stream stays aligned
        weight = 1.0 - case.score
        if weight > 0.0:
            keyed.append((u ** (1.0 / weight), -position, case))
    keyed.sort(reverse=True)
    return [case for _, _, case in keyed[:m]]


def kmeans_representatives(
    items: Sequence[tuple[object, str]],
    n: int,
    provider: EmbeddingProvider,
    seed: int,
) -> list:
    """Ids of the items nearest each of n k-means centroids.

    Seeded farthest-point initialization, Lloyd iterations capped, empty
    clusters reseeded with the point farthest from its own centroid.
    """
    if n < 1:
        raise SelectionError("subset size must be >= 1")
    if n > len(items):
        raise SelectionError(f"subset size {n} exceeds item count {len(items)}")
    ids = [ident for ident, _ in items]
    vectors = provider.embed([text for _, text in items])
    labels, centroids = _lloyd(vectors, n, RandomSource(seed))

    representatives = []
    for cluster in range(n):
        members = np.flatnonzero(labels == cluster)
        distances = np.linalg.norm(vectors[members] - centroids[cluster], axis=1)
        representatives.append(ids[members[int(np.argmin(distances))]])
    return representatives


def rotating_subset(
    pool: Sequence[tuple[object, str]],
    n: int,
    iteration: int,
    provider: EmbeddingProvider,
    base_seed: int,
) -> list:
    """Per-iteration representative subset: k-means at seed base + iteration."""
    return kmeans_representatives(pool, n, provider, base_seed + iteration)


COVERAGE_FLOOR = -1.0  # minimum cosine between unit vectors


def facility_location_select(
    episodes: Sequence[tuple[object, str]],
    validation: Sequence[str],
    m: int,
    provider: EmbeddingProvider,
) -> list:
    """Greedy maximization of sum_v max_{e in S} sim(v, e).

    sim is the dot product of unit-norm embeddings (cosine); ties break
    toward the lower id. Returns m ids in selection order. Coverage is
    tracked above the cosine floor of -1, which shifts the objective by a
    constant (selections are unchanged) but keeps it monotone submodular,
    so marginal gains are non-increasing even with negative similarities.
    """
    if m < 1:
        raise SelectionError("subset size must be >= 1")
    if m > len(episodes):
        raise SelectionError(f"subset size {m} exceeds episode count {len(episodes)}")
    if not validation:
        raise SelectionError("validation set is empty")

    episode_vectors = provider.embed([text for _, text in episodes])
    validation_vectors = provider.embed(list(validation))
    sims = validation_vectors @ episode_vectors.T  # (|V|, |E|)

    order = sorted(range(len(episodes)), key=lambda index: episodes[index][0])
    selected: list[int] = []
    best = np.full(len(validation), COVERAGE_FLOOR)
    for _ in range(m):
        pick = None
        pick_gain = -math.inf
        for index in order:
            if index in selected:
                continue
            gain = float(np.maximum(best, sims[:, index]).sum() - best.sum())
            if gain > pick_gain:
                pick = index
                pick_gain = gain
        selected.append(pick)
        best = np.maximum(best, sims[:, pick])
    return [episodes[index][0] for index in selected]


def _lloyd(vectors: np.ndarray, n: int, rng: RandomSource) -> tuple[np.ndarray, np.ndarray]:
    centroids = vectors[_farthest_point_init(vectors, n, rng)].copy()
    labels = None
    for _round in range(KMEANS_MAX_ITERATIONS):
        distances = np.linalg.norm(vectors[:, None, :] - centroids[None, :, :], axis=2)
        new_labels = np.argmin(distances, axis=1)

        # Reseed empty clusters with the point farthest from its own centroid.
        for cluster in range(n):
            if not np.any(new_labels == cluster):
                own = distances[np.arange(len(vectors)), new_labels]
                farthest = int(np.argmax(own))
                new_labels[farthest] = cluster
                distances[farthest, :] = np.inf
                distances[farthest, cluster] = 0.0

        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for cluster in range(n):
            members = vectors[labels == cluster]
            if len(members):
                centroids[cluster] = members.mean(axis=0)
    return labels, centroids


def _farthest_point_init(vectors: np.ndarray, n: int, rng: RandomSource) -> list[int]:
    chosen = [rng.randrange(len(vectors))]
    nearest = np.linalg.norm(vectors - vectors[chosen[0]], axis=1)
    while len(chosen) < n:
        nearest[chosen] = -1.0  # never re-pick a chosen point
        farthest = int(np.argmax(nearest))
        chosen.append(farthest)
        nearest = np.minimum(nearest, np.linalg.norm(vectors - vectors[farthest], axis=1))
    return chosen
