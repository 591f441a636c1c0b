"""Distances, kernel functions and bandwidth selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InvalidInputError

KERNEL_FAMILIES = ("gaussian", "matern", "linear", "polynomial")
MATERN_NUS = (0.5, 1.5, 2.5)

# floor added to shifted linear/polynomial similarities
POSITIVE_FLOOR = 1e-12


class DegenerateNeighborhoodError(InvalidInputError):
    """All neighborhood distances are zero, so no bandwidth can be chosen."""


@dataclass(frozen=True)
class KernelSpec:
    family: str = "gaussian"
    bandwidth: float | None = None  # None selects the median heuristic
    polynomial_degree: int = 2
    matern_nu: float = 1.5

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise InvalidInputError(f"unknown kernel family {self.family!r}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise InvalidInputError("fixed bandwidth must be positive")
        if int(self.polynomial_degree) < 1:
            raise InvalidInputError("polynomial degree must be >= 1")
        if float(self.matern_nu) not in MATERN_NUS:
            raise InvalidInputError(f"matern_nu must be one of {MATERN_NUS}")

    @property
    def distance_based(self) -> bool:
        return self.family in ("gaussian", "matern")

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "bandwidth": "median" if self.bandwidth is None else self.bandwidth,
            "polynomial_degree": self.polynomial_degree,
            "matern_nu": self.matern_nu,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        d = dict(d)
        if d.get("bandwidth") in ("median", None):
            d["bandwidth"] = None
        else:
            d["bandwidth"] = float(d["bandwidth"])
        return cls(**d)


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise InvalidInputError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("non-finite vector")
    return a, b


def distance(a, b) -> float:
    """Euclidean distance."""
    a, b = _check_pair(a, b)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def distances(points: np.ndarray, query) -> np.ndarray:
    """Euclidean distance from every row of ``points`` to ``query``."""
    points, query = _check_pair(points, query)
    diff = points - query
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def _matern(d: np.ndarray, sigma: float, nu: float) -> np.ndarray:
    s = d / sigma
    if nu == 0.5:
        return np.exp(-s)
    if nu == 1.5:
        t = np.sqrt(3.0) * s
        return (1.0 + t) * np.exp(-t)
    t = np.sqrt(5.0) * s
    return (1.0 + t + t * t / 3.0) * np.exp(-t)


def raw_kernel(spec: KernelSpec, points: np.ndarray, query, bandwidth: float) -> np.ndarray:
    """Unshifted kernel values between each row of ``points`` and ``query``.

    Linear and polynomial values may be non-positive here; see
    :func:`kernel_weights` for the shift that makes them usable as weights.
    """
    points, query = _check_pair(np.atleast_2d(points), query)
    if spec.distance_based:
        if not bandwidth > 0:
            raise InvalidInputError("bandwidth must be positive")
        d = distances(points, query)
        if spec.family == "gaussian":
            return np.exp(-(d * d) / (2.0 * bandwidth * bandwidth))
        return _matern(d, bandwidth, float(spec.matern_nu))
    dot = points @ query
    if spec.family == "linear":
        return dot
    return (1.0 + dot) ** int(spec.polynomial_degree)


def kernel_value(spec: KernelSpec, a, b, bandwidth: float) -> float:
    """Kernel between two vectors.

    For the inner-product families the value is shifted against the pair
    itself (minimum over ``{K(a, b)}``), which leaves just the positive floor;
    meaningful shifted values only arise over a whole neighborhood, see
    :func:`kernel_weights`.
    """
    k = raw_kernel(spec, np.atleast_2d(a), b, bandwidth)
    if spec.distance_based:
        return float(k[0])
    return float(_shift_positive(k)[0])


def _shift_positive(k: np.ndarray) -> np.ndarray:
    return k - k.min() + POSITIVE_FLOOR


def kernel_weights(spec: KernelSpec, points: np.ndarray, query, dists: np.ndarray) -> np.ndarray:
    """Normalized neighbor weights for a resolved neighborhood.

    ``dists`` are the neighborhood distances, used for the median bandwidth
    when ``spec.bandwidth`` is None. If every distance is zero the neighbors
    coincide with the query and uniform weights are returned.
    """
    if spec.distance_based:
        if spec.bandwidth is not None:
            bw = spec.bandwidth
        else:
            try:
                bw = median_bandwidth(dists)
            except DegenerateNeighborhoodError:
                return np.full(len(dists), 1.0 / len(dists))
        k = raw_kernel(spec, points, query, bw)
        if not np.any(k > 0):
            # every neighbor underflowed; fall back to the nearest
            k = (dists == dists.min()).astype(np.float64)
    else:
        k = _shift_positive(raw_kernel(spec, points, query, 1.0))
    return k / k.sum()


def median_bandwidth(dists) -> float:
    """Lower median of the strictly positive distances."""
    d = np.asarray(dists, dtype=np.float64).reshape(-1)
    pos = np.sort(d[d > 0.0])
    if pos.size == 0:
        raise DegenerateNeighborhoodError("all neighborhood distances are zero")
    return float(pos[(pos.size - 1) // 2])
