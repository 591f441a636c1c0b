"""Test-time re-routing strategies.

All strategies start from the router's weights ``r0`` for one test sample and
return new weights on the simplex together with a :class:`Trajectory`. Only
:func:`oracle_gd` receives a label; the others have no label parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import InvalidInputError, RoutingWeights, Sample, interpolate, simplex_project
from .kernels import KernelSpec
from .refindex import EmptyNeighborhoodError, NeighborhoodSpec, ReferenceSet, resolve
from .toymoe import ExpertBank, mixture_loss_grads, mixture_losses

STRATEGY_KINDS = ("identity", "oracle_gd", "ngd", "kernel_regression", "mode_finding")
SCHEDULE_FAMILIES = ("cosine", "step_decay", "fixed")


@dataclass(frozen=True)
class ScheduleSpec:
    family: str = "cosine"
    step_count: int = 10
    lr_max: float = 1e-2
    lr_min: float = 1e-5
    lr0: float = 1e-2
    factor: float = 0.5
    period: int = 3
    lr: float = 1e-3

    def __post_init__(self):
        if self.family not in SCHEDULE_FAMILIES:
            raise InvalidInputError(f"unknown schedule family {self.family!r}")
        if int(self.step_count) < 0:
            raise InvalidInputError("step_count must be non-negative")
        if self.family == "cosine" and not (0 < self.lr_min <= self.lr_max):
            raise InvalidInputError("cosine schedule needs 0 < lr_min <= lr_max")
        if self.family == "step_decay":
            if not (self.lr0 > 0 and 0 < self.factor <= 1 and int(self.period) >= 1):
                raise InvalidInputError("step_decay needs lr0 > 0, factor in (0, 1], period >= 1")
        if self.family == "fixed" and not self.lr > 0:
            raise InvalidInputError("fixed schedule needs lr > 0")

    def to_dict(self) -> dict:
        d = {"family": self.family, "step_count": self.step_count}
        if self.family == "cosine":
            d.update(lr_max=self.lr_max, lr_min=self.lr_min)
        elif self.family == "step_decay":
            d.update(lr0=self.lr0, factor=self.factor, period=self.period)
        else:
            d["lr"] = self.lr
        return d


def schedule_rate(spec: ScheduleSpec, step: int) -> float:
    if not 0 <= step < spec.step_count:
        raise InvalidInputError(f"step {step} outside [0, {spec.step_count})")
    if spec.family == "cosine":
        if spec.step_count == 1:
            return spec.lr_max
        frac = step / (spec.step_count - 1)
        return spec.lr_min + 0.5 * (spec.lr_max - spec.lr_min) * (1.0 + math.cos(math.pi * frac))
    if spec.family == "step_decay":
        return spec.lr0 * spec.factor ** (step // spec.period)
    return spec.lr


@dataclass(frozen=True)
class StrategySpec:
    kind: str
    name: str = ""
    neighborhood: NeighborhoodSpec = NeighborhoodSpec()
    kernel: KernelSpec = KernelSpec()
    schedule: ScheduleSpec = ScheduleSpec()
    mode_alpha: float = 0.5
    mode_max_steps: int = 10
    mode_tol: float = 1e-6
    linesearch_iters: int = 20
    fixed_alpha: float | None = None  # kernel_regression: skip the search

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise InvalidInputError(f"unknown strategy kind {self.kind!r}")
        if not self.name:
            object.__setattr__(self, "name", self.kind)
        space = self.neighborhood.space
        if self.kind in ("ngd", "kernel_regression") and space != "embedding":
            raise InvalidInputError(f"{self.kind} searches neighbors in embedding space")
        if self.kind == "mode_finding":
            if space != "routing_weight":
                raise InvalidInputError("mode_finding searches neighbors in routing_weight space")
            if not 0 < self.mode_alpha < 1:
                raise InvalidInputError("mode_alpha must lie in (0, 1)")
            if int(self.mode_max_steps) < 1 or not self.mode_tol > 0:
                raise InvalidInputError("mode_max_steps >= 1 and mode_tol > 0 required")
        if self.kind == "kernel_regression":
            if int(self.linesearch_iters) < 0:
                raise InvalidInputError("linesearch_iters must be >= 0")
            if self.fixed_alpha is not None and not 0 <= self.fixed_alpha <= 1:
                raise InvalidInputError("fixed_alpha must lie in [0, 1]")

    @classmethod
    def default(cls, kind: str, **overrides) -> "StrategySpec":
        """Defaults: kNN with k=5, Gaussian kernel, 10 cosine steps from 1e-2 to 1e-5."""
        if kind == "mode_finding":
            overrides.setdefault("neighborhood", NeighborhoodSpec(space="routing_weight"))
        return cls(kind=kind, **overrides)

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.kind in ("ngd", "kernel_regression", "mode_finding"):
            d["neighborhood"] = self.neighborhood.to_dict()
            d["kernel"] = self.kernel.to_dict()
        if self.kind in ("oracle_gd", "ngd"):
            d["schedule"] = self.schedule.to_dict()
        if self.kind == "mode_finding":
            d.update(mode_alpha=self.mode_alpha, mode_max_steps=self.mode_max_steps,
                     mode_tol=self.mode_tol)
        if self.kind == "kernel_regression":
            d["linesearch_iters"] = self.linesearch_iters
            if self.fixed_alpha is not None:
                d["fixed_alpha"] = self.fixed_alpha
        return d


@dataclass
class Trajectory:
    """Per-step record of one re-routing run.

    ``weights[0]`` is the router's output. ``losses[t]`` is the objective the
    strategy optimizes, evaluated at ``weights[t]`` (None where the strategy
    did not evaluate it). Counters tally model evaluations on reference or
    test inputs.
    """

    weights: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    forward_evals: int = 0
    grad_evals: int = 0
    noop: bool = False
    neighbor_sets: list = field(default_factory=list)
    candidates: list = field(default_factory=list)  # (alpha, surrogate) pairs

    @property
    def final(self) -> RoutingWeights:
        return self.weights[-1]

    @property
    def steps(self) -> int:
        return len(self.weights) - 1

    def predictions(self, bank: ExpertBank, x) -> list:
        """Recompute the prediction at every recorded step."""
        return [bank.predict(x, w).class_id for w in self.weights]

    def to_records(self, sample_id: int) -> list:
        recs = []
        for t, w in enumerate(self.weights):
            loss = self.losses[t] if t < len(self.losses) else None
            recs.append({"sample_id": sample_id, "step": t,
                         "weights": w.weights.tolist(), "loss": loss})
        return recs


def _noop(r0: RoutingWeights) -> Trajectory:
    return Trajectory(weights=[r0], losses=[None], noop=True)


def _gradient_descent(r0, spec: ScheduleSpec, loss_and_grad, evals_per_step, traj):
    traj.weights.append(r0)
    r = r0.weights
    for step in range(spec.step_count):
        loss, grad = loss_and_grad(r)
        traj.grad_evals += evals_per_step
        traj.losses.append(float(loss))
        r = simplex_project(r - schedule_rate(spec, step) * grad).weights
        traj.weights.append(RoutingWeights(r))
    traj.losses.append(None)
    return traj


def oracle_gd(bank: ExpertBank, x, label, r0: RoutingWeights, spec: StrategySpec) -> Trajectory:
    """Projected gradient descent on the test sample's own loss (needs its label)."""
    logits = bank.batch_logits(x.features)
    y = np.array([label.class_id])

    def loss_and_grad(r):
        losses, grads = mixture_loss_grads(logits, y, r)
        return losses[0], grads[0]

    return _gradient_descent(r0, spec.schedule, loss_and_grad, 1, Trajectory())


def ngd(bank: ExpertBank, refset: ReferenceSet, embedding, r0: RoutingWeights,
        spec: StrategySpec, reresolve: bool = False) -> Trajectory:
    """Neighborhood gradient descent.

    The neighbors of the test embedding are resolved once and frozen; the
    descent minimizes their kernel-weighted mean loss. ``reresolve`` repeats
    the search at every step and records each neighbor set (diagnostic only).
    """
    query = _values(embedding)
    try:
        nb = resolve(refset, query, spec.neighborhood, spec.kernel)
    except EmptyNeighborhoodError:
        return _noop(r0)
    logits = bank.batch_logits(refset.features[nb.indices])
    labels = refset.labels[nb.indices]
    w = nb.kernel_weights
    traj = Trajectory(neighbor_sets=[nb.indices.tolist()])

    def loss_and_grad(r):
        if reresolve:
            again = resolve(refset, query, spec.neighborhood, spec.kernel)
            traj.neighbor_sets.append(again.indices.tolist())
        losses, grads = mixture_loss_grads(logits, labels, r)
        return w @ losses, w @ grads

    return _gradient_descent(r0, spec.schedule, loss_and_grad, len(nb), traj)


def kernel_regression(bank: ExpertBank, refset: ReferenceSet, embedding, r0: RoutingWeights,
                      spec: StrategySpec) -> Trajectory:
    """Kernel-weighted neighbor routing plus a line search back toward ``r0``.

    Candidates are ``alpha * r0 + (1 - alpha) * r_hat``. The search evaluates
    alpha = 0, 1/2, 1 and then halves a bracket around the best point for
    ``linesearch_iters`` rounds; the best evaluated alpha wins, with ties
    going to the earlier evaluation.
    """
    try:
        nb = resolve(refset, _values(embedding), spec.neighborhood, spec.kernel)
    except EmptyNeighborhoodError:
        return _noop(r0)
    w = nb.kernel_weights
    r_hat = RoutingWeights(w @ refset.routings[nb.indices])
    logits = bank.batch_logits(refset.features[nb.indices])
    labels = refset.labels[nb.indices]
    traj = Trajectory(neighbor_sets=[nb.indices.tolist()])
    cache = {}

    def surrogate(alpha):
        if alpha not in cache:
            r = interpolate(r0, r_hat, alpha).weights
            cache[alpha] = float(w @ mixture_losses(logits, labels, r))
            traj.forward_evals += len(nb)
            traj.candidates.append((alpha, cache[alpha]))
        return cache[alpha]

    if spec.fixed_alpha is not None:
        best = float(spec.fixed_alpha)
        surrogate(best)
    else:
        for a in (0.0, 1.0, 0.5):
            surrogate(a)
        mid, half = 0.5, 0.5
        for _ in range(spec.linesearch_iters):
            half /= 2.0
            pts = [a for a in (mid - half, mid, mid + half) if 0.0 <= a <= 1.0]
            mid = min(pts, key=lambda a: (surrogate(a), pts.index(a)))
        best = min(cache, key=lambda a: (cache[a], list(cache).index(a)))
    traj.weights = [r0, interpolate(r0, r_hat, best)]
    traj.losses = [cache.get(1.0), cache[best]]
    return traj


def mode_finding(refset: ReferenceSet, r0: RoutingWeights, spec: StrategySpec) -> Trajectory:
    """Damped mean shift in routing-weight space; never calls the model."""
    traj = Trajectory(weights=[r0], losses=[None])
    r = r0
    for _ in range(spec.mode_max_steps):
        try:
            nb = resolve(refset, r.weights, spec.neighborhood, spec.kernel)
        except EmptyNeighborhoodError:
            if traj.steps == 0:
                traj.noop = True
            break
        traj.neighbor_sets.append(nb.indices.tolist())
        r_bar = RoutingWeights(nb.kernel_weights @ refset.routings[nb.indices])
        new = interpolate(r, r_bar, spec.mode_alpha)
        traj.weights.append(new)
        traj.losses.append(None)
        moved = float(np.max(np.abs(new.weights - r.weights)))
        r = new
        if moved < spec.mode_tol:
            break
    return traj


def apply(spec: StrategySpec, bank: ExpertBank, refset: ReferenceSet, sample: Sample,
          r0: RoutingWeights, label=None):
    """Run one strategy on one sample; returns ``(final weights, trajectory)``.

    ``label`` is read by oracle_gd only. No strategy reads ``sample.label``.
    """
    if spec.kind == "identity":
        traj = Trajectory(weights=[r0], losses=[None])
    elif spec.kind == "oracle_gd":
        if label is None:
            raise InvalidInputError("oracle_gd needs the true label")
        traj = oracle_gd(bank, sample.input, label, r0, spec)
    elif spec.kind == "ngd":
        traj = ngd(bank, refset, sample.embedding, r0, spec)
    elif spec.kind == "kernel_regression":
        traj = kernel_regression(bank, refset, sample.embedding, r0, spec)
    else:
        traj = mode_finding(refset, r0, spec)
    return traj.final, traj


def with_steps(spec: StrategySpec, steps: int) -> StrategySpec:
    return replace(spec, schedule=replace(spec.schedule, step_count=int(steps)))


def _values(embedding) -> np.ndarray:
    return getattr(embedding, "values", embedding)
