"""Shared domain types, simplex arithmetic and seeded random streams."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIMPLEX_ATOL = 1e-9


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's contract."""


def _frozen_array(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RoutingWeights:
    """A point on the probability simplex over ``E >= 2`` experts."""

    weights: np.ndarray

    def __post_init__(self):
        w = _frozen_array(self.weights, "routing weights")
        if w.size < 2:
            raise InvalidInputError("routing weights need at least 2 experts")
        if np.any(w < 0.0):
            raise InvalidInputError("routing weights must be non-negative")
        if abs(w.sum() - 1.0) > SIMPLEX_ATOL:
            raise InvalidInputError(f"routing weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.weights.size

    def __eq__(self, other):
        if not isinstance(other, RoutingWeights):
            return NotImplemented
        return np.array_equal(self.weights, other.weights)

    __hash__ = None

    @property
    def top1(self) -> int:
        return int(np.argmax(self.weights))


@dataclass(frozen=True, eq=False)
class TaskEmbedding:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, "embedding"))

    def __len__(self):
        return self.values.size


@dataclass(frozen=True, eq=False)
class ModelInput:
    """Model features plus the hidden task type.

    ``task_type`` is metadata for the generator and the analytics; no
    re-routing strategy reads it.
    """

    features: np.ndarray
    task_type: int = 0

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen_array(self.features, "features"))
        if int(self.task_type) < 0:
            raise InvalidInputError("task_type must be non-negative")
        object.__setattr__(self, "task_type", int(self.task_type))


@dataclass(frozen=True)
class Label:
    class_id: int

    def __post_init__(self):
        if int(self.class_id) < 0:
            raise InvalidInputError("class_id must be non-negative")
        object.__setattr__(self, "class_id", int(self.class_id))


@dataclass(frozen=True, eq=False)
class Sample:
    """A benchmark sample: input, its task embedding and its true label."""

    sample_id: int
    input: ModelInput
    embedding: TaskEmbedding
    label: Label


@dataclass(frozen=True, eq=False)
class ReferenceEntry:
    """A reference sample whose routing is known to produce the right label.

    Construction goes through :meth:`verified`, which runs the model and
    refuses entries that the model gets wrong.
    """

    input: ModelInput
    embedding: TaskEmbedding
    routing: RoutingWeights
    label: Label
    sample_id: int = -1
    _token: object = field(default=None, repr=False)

    def __post_init__(self):
        if self._token is not _VERIFIED:
            raise InvalidInputError(
                "ReferenceEntry must be built with ReferenceEntry.verified()"
            )

    @classmethod
    def verified(cls, model, input, embedding, routing, label, sample_id=-1):
        """Build an entry after checking ``model.predict(input, routing) == label``.

        ``model`` is anything with a ``predict(x, r) -> Label`` method.
        """
        pred = model.predict(input, routing)
        if pred != label:
            raise InvalidInputError(
                f"reference entry {sample_id}: model predicts {pred.class_id}, "
                f"label is {label.class_id}"
            )
        return cls(input, embedding, routing, label, sample_id, _VERIFIED)


_VERIFIED = object()


def simplex_project(v) -> RoutingWeights:
    """Euclidean projection of ``v`` onto the probability simplex.

    Sort-based algorithm: find the threshold ``theta`` such that
    ``max(v - theta, 0)`` sums to one.
    """
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("cannot project non-finite vector")
    if v.size < 2:
        raise InvalidInputError("simplex projection needs at least 2 entries")
    return RoutingWeights(_project(v))


def _project(v: np.ndarray) -> np.ndarray:
    if np.all(v >= 0.0) and abs(v.sum() - 1.0) <= 1e-12:
        return v.copy()
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    theta = css[rho - 1] / rho
    w = np.maximum(v - theta, 0.0)
    # absorb rounding so that sum(w) == 1 to machine precision
    w /= w.sum()
    return w


def interpolate(a: RoutingWeights, b: RoutingWeights, alpha: float) -> RoutingWeights:
    """Return ``alpha * a + (1 - alpha) * b``."""
    if len(a) != len(b):
        raise InvalidInputError("routing weights differ in dimension")
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return a
    if alpha == 0.0:
        return b
    w = alpha * a.weights + (1.0 - alpha) * b.weights
    return RoutingWeights(np.maximum(w, 0.0))


def rng_stream(seed: int, stream_id: int) -> np.random.Generator:
    """Deterministic generator for ``(seed, stream_id)``.

    PCG64 seeded through ``SeedSequence`` with the stream id as spawn key, so
    streams are platform-stable and statistically independent.
    """
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise InvalidInputError("seed must be a 64-bit unsigned integer")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))
