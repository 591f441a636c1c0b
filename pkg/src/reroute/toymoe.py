"""A small differentiable mixture of linear experts.

Each expert maps features to class logits; the routing weights mix expert
logits linearly before a softmax. The loss is cross-entropy, so it is convex
in the routing weights and its gradient has a closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InvalidInputError, Label, ModelInput, RoutingWeights

P_FLOOR = 1e-300


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class ExpertBank:
    """Frozen expert parameters: ``W`` has shape (E, C, D), ``b`` (E, C)."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64)
        b = np.array(self.b, dtype=np.float64)
        if W.ndim != 3 or b.shape != W.shape[:2]:
            raise InvalidInputError(f"inconsistent expert shapes {W.shape}, {b.shape}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise InvalidInputError("expert parameters must be finite")
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @property
    def expert_count(self) -> int:
        return self.W.shape[0]

    @property
    def class_count(self) -> int:
        return self.W.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.W.shape[2]

    # -- single-sample API ------------------------------------------------

    def expert_logits(self, x: ModelInput) -> np.ndarray:
        """Row ``j`` holds ``W_j @ x + b_j``; shape (E, C)."""
        f = _features(x)
        if f.size != self.feature_dim:
            raise InvalidInputError(
                f"expected {self.feature_dim} features, got {f.size}"
            )
        return self.W @ f + self.b

    def forward(self, x: ModelInput, r: RoutingWeights) -> np.ndarray:
        return softmax(_weights(r, self.expert_count) @ self.expert_logits(x))

    def predict(self, x: ModelInput, r: RoutingWeights) -> Label:
        # np.argmax returns the first maximum, i.e. the lower class id on ties
        return Label(int(np.argmax(self.forward(x, r))))

    def loss(self, x: ModelInput, r: RoutingWeights, y: Label) -> float:
        p = self.forward(x, r)
        return float(-np.log(max(p[y.class_id], P_FLOOR)))

    def loss_grad_r(self, x: ModelInput, r: RoutingWeights, y: Label) -> np.ndarray:
        """d loss / d r_j = <p - onehot(y), logits_j>."""
        z = self.expert_logits(x)
        p = softmax(_weights(r, self.expert_count) @ z)
        p[y.class_id] -= 1.0
        return z @ p

    # -- batched API over precomputed logits ------------------------------

    def batch_logits(self, features: np.ndarray) -> np.ndarray:
        """Expert logits for a stack of feature rows; shape (N, E, C)."""
        features = np.atleast_2d(features)
        return np.einsum("ecd,nd->nec", self.W, features) + self.b


def _features(x) -> np.ndarray:
    return x.features if isinstance(x, ModelInput) else np.asarray(x, dtype=np.float64)


def _weights(r, e: int) -> np.ndarray:
    w = r.weights if isinstance(r, RoutingWeights) else np.asarray(r, dtype=np.float64)
    if w.size != e:
        raise InvalidInputError(f"routing has {w.size} experts, model has {e}")
    return w


def mixture_losses(logits: np.ndarray, labels: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Cross-entropy of each sample under routing ``r``.

    ``logits`` is (N, E, C) from :meth:`ExpertBank.batch_logits`.
    """
    p = softmax(np.einsum("e,nec->nc", r, logits))
    py = p[np.arange(labels.size), labels]
    return -np.log(np.maximum(py, P_FLOOR))


def mixture_loss_grads(logits: np.ndarray, labels: np.ndarray, r: np.ndarray):
    """Per-sample losses (N,) and gradients w.r.t. ``r`` (N, E)."""
    p = softmax(np.einsum("e,nec->nc", r, logits))
    rows = np.arange(labels.size)
    losses = -np.log(np.maximum(p[rows, labels], P_FLOOR))
    p[rows, labels] -= 1.0
    grads = np.einsum("nec,nc->ne", logits, p)
    return losses, grads


@dataclass(frozen=True, eq=False)
class Router:
    """Linear router: routing = softmax(R @ x + bias)."""

    R: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64)
        bias = np.array(self.bias, dtype=np.float64)
        if R.ndim != 2 or bias.shape != (R.shape[0],):
            raise InvalidInputError(f"inconsistent router shapes {R.shape}, {bias.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(bias))):
            raise InvalidInputError("router parameters must be finite")
        R.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "bias", bias)

    def route(self, x: ModelInput) -> RoutingWeights:
        f = _features(x)
        if f.size != self.R.shape[1]:
            raise InvalidInputError(f"expected {self.R.shape[1]} features, got {f.size}")
        w = softmax(self.R @ f + self.bias)
        return RoutingWeights(w / w.sum())

    def route_batch(self, features: np.ndarray) -> np.ndarray:
        return softmax(np.atleast_2d(features) @ self.R.T + self.bias)


@dataclass(frozen=True, eq=False)
class FixedRouter:
    """Routes every input of task type ``t`` to ``mixtures[t]``.

    Stand-in for an oracle router in tests; reads the hidden task type.
    """

    mixtures: tuple

    def route(self, x: ModelInput) -> RoutingWeights:
        return self.mixtures[x.task_type]
