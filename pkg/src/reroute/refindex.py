"""Reference set storage and neighborhood resolution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InvalidInputError, ReferenceEntry
from .kernels import KernelSpec, distances, kernel_weights

SPACES = ("embedding", "routing_weight")


class EmptyNeighborhoodError(LookupError):
    """An epsilon-ball query found no reference entries."""


@dataclass(frozen=True)
class NeighborhoodSpec:
    mode: str = "knn"
    k: int = 5
    epsilon: float = 0.5
    space: str = "embedding"

    def __post_init__(self):
        if self.mode not in ("knn", "epsilon_ball"):
            raise InvalidInputError(f"unknown neighborhood mode {self.mode!r}")
        if self.space not in SPACES:
            raise InvalidInputError(f"unknown neighborhood space {self.space!r}")
        if self.mode == "knn" and int(self.k) < 1:
            raise InvalidInputError("k must be >= 1")
        if self.mode == "epsilon_ball" and not self.epsilon > 0:
            raise InvalidInputError("epsilon must be positive")

    def to_dict(self) -> dict:
        d = {"mode": self.mode, "space": self.space}
        if self.mode == "knn":
            d["k"] = self.k
        else:
            d["epsilon"] = self.epsilon
        return d


@dataclass(frozen=True, eq=False)
class Neighborhood:
    indices: np.ndarray
    distances: np.ndarray
    kernel_weights: np.ndarray

    def __len__(self):
        return self.indices.size


class ReferenceSet:
    """Sealed, read-only collection of reference entries.

    Embeddings, routings, features and labels are also kept as stacked
    arrays so that neighborhood queries and batched losses avoid Python loops.
    """

    def __init__(self, entries):
        entries = tuple(entries)
        if not entries:
            raise InvalidInputError("reference set must be non-empty")
        for e in entries:
            if not isinstance(e, ReferenceEntry):
                raise InvalidInputError("reference set accepts ReferenceEntry only")
        dims = {len(e.embedding) for e in entries}
        if len(dims) != 1:
            raise InvalidInputError(f"mixed embedding dimensions {sorted(dims)}")
        experts = {len(e.routing) for e in entries}
        if len(experts) != 1:
            raise InvalidInputError(f"mixed routing dimensions {sorted(experts)}")
        features = {e.input.features.size for e in entries}
        if len(features) != 1:
            raise InvalidInputError(f"mixed feature dimensions {sorted(features)}")
        self._entries = entries
        self.embedding_dim = dims.pop()
        self.expert_count = experts.pop()
        self.embeddings = _stack([e.embedding.values for e in entries])
        self.routings = _stack([e.routing.weights for e in entries])
        self.features = _stack([e.input.features for e in entries])
        self.labels = np.array([e.label.class_id for e in entries], dtype=np.int64)
        self.labels.setflags(write=False)

    @property
    def entries(self) -> tuple:
        return self._entries

    def __len__(self):
        return len(self._entries)

    def __getitem__(self, i) -> ReferenceEntry:
        return self._entries[i]

    def points(self, space: str) -> np.ndarray:
        return self.embeddings if space == "embedding" else self.routings


def _stack(rows) -> np.ndarray:
    arr = np.stack(rows)
    arr.setflags(write=False)
    return arr


def seal(entries) -> ReferenceSet:
    return ReferenceSet(entries)


def resolve(refset: ReferenceSet, query, spec: NeighborhoodSpec, kernel: KernelSpec) -> Neighborhood:
    """Find the neighbors of ``query`` in ``spec.space``.

    kNN returns exactly ``min(k, n)`` entries; at equal distance the lower
    entry index wins. The epsilon ball includes distance == epsilon and raises
    :class:`EmptyNeighborhoodError` if nothing is inside.
    """
    points = refset.points(spec.space)
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.size != points.shape[1]:
        raise InvalidInputError(
            f"query has dimension {query.size}, {spec.space} space has {points.shape[1]}"
        )
    d = distances(points, query)
    if spec.mode == "knn":
        k = min(int(spec.k), d.size)
        # stable sort on distance keeps index order among ties
        idx = np.argsort(d, kind="stable")[:k]
    else:
        idx = np.flatnonzero(d <= spec.epsilon)
        if idx.size == 0:
            raise EmptyNeighborhoodError(f"no reference entry within epsilon={spec.epsilon}")
        idx = idx[np.argsort(d[idx], kind="stable")]
    nd = d[idx]
    w = kernel_weights(kernel, points[idx], query, nd)
    return Neighborhood(indices=idx, distances=nd, kernel_weights=w)
