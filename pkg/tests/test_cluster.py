import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from keyframe_da.cluster import ClusterBank, cosine
from keyframe_da.errors import DimensionError, ZeroVectorError


class TestCosine:
    def test_identical(self):
        assert cosine([1, 0], [1, 0]) == 1.0

    def test_orthogonal(self):
        assert cosine([1, 0], [0, 1]) == 0.0

    def test_diagonal(self):
        # dot / (norm * norm) evaluated by hand: 1 / (1 * sqrt(2))
        assert cosine([1, 0], [1, 1]) == pytest.approx(1 / math.sqrt(2), abs=1e-15)

    def test_zero_vector(self):
        with pytest.raises(ZeroVectorError):
            cosine([0, 0], [1, 0])

    def test_clamped(self):
        v = np.array([1e-3, 3e-3, 7e-3])
        assert -1.0 <= cosine(v, v) <= 1.0
        assert -1.0 <= cosine(v, -v) <= 1.0


def bank_of(*rows):
    bank = ClusterBank(len(rows[0]))
    for r in rows:
        bank.observe(r, gamma=2.0)  # gamma > 1 always spawns
    return bank


class TestMaxSimilarity:
    def test_picks_best(self):
        score, idx = bank_of([1, 0], [0, 1]).max_similarity([0.6, 0.8])
        assert idx == 1
        assert score == pytest.approx(0.8, abs=1e-15)
        # checked against the other centroid too: 0.6 < 0.8
        assert cosine([1, 0], [0.6, 0.8]) == pytest.approx(0.6)

    def test_exact(self):
        assert bank_of([1, 0]).max_similarity([1, 0]) == (1.0, 0)

    def test_empty(self):
        assert ClusterBank(2).max_similarity([1, 0]) is None

    def test_tie_goes_to_lowest_index(self):
        assert bank_of([1, 0], [0, 1], [1, 0]).max_similarity([1, 0]).index == 0
        assert bank_of([1, 0], [0, 1]).max_similarity([1, 1]).index == 0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            bank_of([1, 0]).max_similarity([1, 0, 0])


class TestObserve:
    def test_first_spawns(self):
        bank = ClusterBank(2)
        obs = bank.observe([1, 0], 0.975)
        assert obs.spawned and obs.score is None
        np.testing.assert_array_equal(bank.centroids, [[1, 0]])

    def test_duplicate_assigned(self):
        bank = bank_of([1, 0])
        obs = bank.observe([1, 0], 0.975)
        assert not obs.spawned and obs.index == 0
        np.testing.assert_array_equal(bank.centroids, [[1, 0]])
        assert bank.counts == [2]

    def test_orthogonal_spawns(self):
        bank = bank_of([1, 0])
        obs = bank.observe([0, 1], 0.975)
        assert obs.spawned and obs.score == 0.0
        assert len(bank) == 2

    def test_running_mean(self):
        bank = ClusterBank(2)
        for e in ([1.0, 0.0], [1.0, 0.1], [1.0, -0.1], [2.0, 0.0]):
            bank.observe(e, 0.9)
        np.testing.assert_allclose(bank.centroids[0], [1.25, 0.0], atol=1e-15)
        assert bank.counts == [4]

    def test_zero_embedding_rejected(self):
        with pytest.raises(ZeroVectorError):
            ClusterBank(2).observe([0, 0], 0.5)

    def test_growth_beyond_initial_capacity(self):
        bank = ClusterBank(3)
        eye = np.eye(3)
        for i in range(40):
            bank.observe(eye[i % 3] * (i + 1), gamma=1.5)
        assert len(bank) == 40

    def test_snapshot_round_trip(self, rng):
        bank = ClusterBank(5)
        for e in rng.normal(size=(50, 5)):
            bank.observe(e, 0.3)
        back = ClusterBank.from_dict(bank.to_dict())
        np.testing.assert_array_equal(back.centroids, bank.centroids)
        assert back.counts == bank.counts
        e = rng.normal(size=5)
        assert back.max_similarity(e) == bank.max_similarity(e)


streams = st.tuples(
    st.integers(1, 8),  # dimension
    st.integers(1, 120),  # length
    st.floats(-1.2, 1.2),  # gamma
    st.integers(0, 2**32 - 1),
)


@settings(max_examples=60, deadline=None)
@given(streams)
def test_centroids_match_brute_force_means(params):
    d, n, gamma, seed = params
    rng = np.random.default_rng(seed)
    # a few tight blobs so both spawns and assignments happen
    centers = rng.normal(size=(3, d))
    data = centers[rng.integers(0, 3, n)] + 0.1 * rng.normal(size=(n, d))
    bank = ClusterBank(d, track_members=True)
    sizes = []
    for e in data:
        before = len(bank)
        obs = bank.observe(e, gamma)
        sizes.append(len(bank))
        assert len(bank) == before + (1 if obs.spawned else 0)
    assert sizes == sorted(sizes)
    for centroid, members in zip(bank.centroids, bank.members):
        np.testing.assert_allclose(centroid, np.mean(members, axis=0), rtol=0, atol=1e-9)
    assert sum(bank.counts) == n


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_threshold_endpoints(d, n, seed):
    data = np.random.default_rng(seed).normal(size=(n, d)) + 1e-3
    above = ClusterBank(d)
    below = ClusterBank(d)
    assert all(above.observe(e, 1.0 + 1e-9).spawned for e in data)
    spawned = [below.observe(e, -1.0).spawned for e in data]
    assert spawned[0] and not any(spawned[1:])


def test_deterministic(rng):
    data = rng.normal(size=(300, 6))
    banks = []
    for _ in range(2):
        b = ClusterBank(6)
        for e in data:
            b.observe(e, 0.5)
        banks.append(b)
    assert banks[0].centroids.tobytes() == banks[1].centroids.tobytes()
    assert banks[0].counts == banks[1].counts
