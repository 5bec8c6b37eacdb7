"""Incremental online clustering with cosine similarity.

Each cluster keeps the running arithmetic mean of the embeddings assigned
to it. A new embedding either joins the most similar cluster or, when no
centroid reaches the threshold, starts a cluster of its own.
"""
from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np

from .errors import DimensionError, NonFiniteError, ZeroVectorError

# scores this close to 1 are rounding noise on parallel vectors
_ONE_SNAP = 1e-12


def cosine(a, b) -> float:
    """Cosine similarity clamped to [-1, 1]; parallel vectors score exactly 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"cosine of vectors with shapes {a.shape} and {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine similarity is undefined for a zero vector")
    c = float(np.dot(a, b) / (na * nb))
    if c > 1.0 - _ONE_SNAP:
        return 1.0
    return max(-1.0, c)


class Match(NamedTuple):
    score: float
    index: int


class Observation(NamedTuple):
    """Result of :meth:`ClusterBank.observe`.

    ``score`` is the best similarity before the update (``None`` for an empty bank).
    """

    spawned: bool
    index: int
    score: Optional[float]


class Cluster(NamedTuple):
    centroid: np.ndarray
    member_count: int


class ClusterBank:
    """Ordered set of running-mean centroids.

    Centroids live in one preallocated matrix so that the similarity scan is
    a single matrix-vector product. With ``track_members=True`` every
    assigned embedding is also retained, which is only useful for checking
    centroids against a brute-force mean.
    """

    def __init__(self, dimension: int, track_members: bool = False):
        if dimension < 1:
            raise DimensionError(f"bank dimension must be >= 1, got {dimension}")
        self.dimension = int(dimension)
        self._centroids = np.empty((8, self.dimension))
        self._norms = np.empty(8)
        self._counts: list[int] = []
        self.track_members = track_members
        self.members: list[list[np.ndarray]] = []

    def __len__(self) -> int:
        return len(self._counts)

    @property
    def centroids(self) -> np.ndarray:
        return self._centroids[: len(self)].copy()

    @property
    def counts(self) -> list[int]:
        return list(self._counts)

    @property
    def clusters(self) -> list[Cluster]:
        return [Cluster(self._centroids[i].copy(), c) for i, c in enumerate(self._counts)]

    def _check(self, e) -> tuple[np.ndarray, float]:
        e = np.asarray(e, dtype=np.float64)
        if e.shape != (self.dimension,):
            raise DimensionError(f"expected embedding of dimension {self.dimension}, got shape {e.shape}")
        if not np.all(np.isfinite(e)):
            raise NonFiniteError("embedding contains NaN or Inf")
        norm = float(np.linalg.norm(e))
        if norm == 0.0:
            raise ZeroVectorError("cannot cluster a zero embedding")
        return e, norm

    def _similarities(self, e: np.ndarray, norm: float) -> np.ndarray:
        n = len(self)
        with np.errstate(divide="ignore", invalid="ignore"):
            sims = (self._centroids[:n] @ e) / (self._norms[:n] * norm)
        # a centroid can only reach zero when opposite members were merged
        # (gamma <= -1); it counts as maximally dissimilar
        sims[self._norms[:n] == 0.0] = -1.0
        sims[sims > 1.0 - _ONE_SNAP] = 1.0
        return np.maximum(sims, -1.0)

    def max_similarity(self, e) -> Optional[Match]:
        """Best cosine against all centroids; ties resolve to the lowest index."""
        e, norm = self._check(e)
        if len(self) == 0:
            return None
        sims = self._similarities(e, norm)
        idx = int(np.argmax(sims))
        return Match(float(sims[idx]), idx)

    def observe(self, e, gamma: float) -> Observation:
        e, norm = self._check(e)
        if len(self) == 0:
            return Observation(True, self._spawn(e, norm), None)
        sims = self._similarities(e, norm)
        idx = int(np.argmax(sims))
        score = float(sims[idx])
        if score < gamma:
            return Observation(True, self._spawn(e, norm), score)
        self._assign(idx, e)
        return Observation(False, idx, score)

    def _spawn(self, e: np.ndarray, norm: float) -> int:
        n = len(self)
        if n == self._centroids.shape[0]:
            grow = max(8, n)
            self._centroids = np.vstack([self._centroids, np.empty((grow, self.dimension))])
            self._norms = np.concatenate([self._norms, np.empty(grow)])
        self._centroids[n] = e
        self._norms[n] = norm
        self._counts.append(1)
        if self.track_members:
            self.members.append([e.copy()])
        return n

    def _assign(self, idx: int, e: np.ndarray) -> None:
        k = self._counts[idx]
        c = (self._centroids[idx] * k + e) / (k + 1)
        self._centroids[idx] = c
        self._norms[idx] = np.linalg.norm(c)
        self._counts[idx] = k + 1
        if self.track_members:
            self.members[idx].append(e.copy())

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "centroids": [[float(v) for v in row] for row in self._centroids[: len(self)]],
            "counts": list(self._counts),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ClusterBank":
        bank = cls(int(data["dimension"]))
        centroids = data["centroids"]
        counts = data["counts"]
        if len(centroids) != len(counts):
            raise DimensionError("bank snapshot has mismatched centroid and count lists")
        for row, count in zip(centroids, counts):
            row = np.asarray(row, dtype=np.float64)
            if row.shape != (bank.dimension,):
                raise DimensionError(f"snapshot centroid has shape {row.shape}")
            if int(count) < 1:
                raise ValueError("snapshot member counts must be >= 1")
            idx = bank._spawn(row, float(np.linalg.norm(row)))
            bank._counts[idx] = int(count)
        return bank

    def __repr__(self):
        return f"ClusterBank(dimension={self.dimension}, clusters={len(self)})"
