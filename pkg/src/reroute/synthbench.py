"""Synthetic benchmark with a deliberately miscalibrated router.

Every task type owns a ground-truth expert mixture, and labels are produced by
that mixture, so the right routing always exists. By default inputs carry no
task information, which limits any router that sees only the features; the
router is additionally trained with a bonus for routing mass on one expert.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .core import (
    InvalidInputError,
    Label,
    ModelInput,
    ReferenceEntry,
    RoutingWeights,
    Sample,
    TaskEmbedding,
    rng_stream,
)
from .refindex import ReferenceSet, seal
from .toymoe import ExpertBank, Router, softmax

# stream ids for rng_stream
EXPERTS, MIXTURES, FEATURES, EMBEDDINGS, ROUTER_INIT, SUBSAMPLE, TASK_MEANS = range(7)


class EmptyReferenceError(InvalidInputError):
    """No pool sample was predicted correctly, so no reference set exists."""


@dataclass(frozen=True)
class BenchSpec:
    task_type_count: int = 8
    ref_per_type: int = 400
    test_per_type: int = 200
    feature_dim: int = 16
    expert_count: int = 6
    class_count: int = 4
    embedding_noise_sigma: float = 0.05
    skew_target: int = 0
    skew_strength: float = 12.0
    support_size: int = 1
    skew_in_support: bool = False
    expert_scale: float = 96.0
    center_experts: bool = True
    task_feature_shift: float = 0.0
    router_steps: int = 300
    router_lr: float = 0.5
    router_init_scale: float = 0.01
    cap_per_type: int = 5000
    seed: int = 0

    def __post_init__(self):
        counts = ("task_type_count", "ref_per_type", "test_per_type", "feature_dim",
                  "class_count", "support_size", "cap_per_type")
        for name in counts:
            if int(getattr(self, name)) < 1:
                raise InvalidInputError(f"{name} must be >= 1")
        if self.expert_count < 2:
            raise InvalidInputError("expert_count must be >= 2")
        if self.support_size > self.expert_count:
            raise InvalidInputError("support_size cannot exceed expert_count")
        if not 0 <= self.skew_target < self.expert_count:
            raise InvalidInputError("skew_target must name an expert")
        if self.embedding_noise_sigma < 0 or self.skew_strength < 0 or self.task_feature_shift < 0:
            raise InvalidInputError("noise sigma, skew strength and task feature shift must be >= 0")
        if self.expert_scale <= 0 or self.router_lr <= 0 or self.router_steps < 0:
            raise InvalidInputError("expert_scale, router_lr > 0 and router_steps >= 0 required")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> tuple:
        return tuple(f.name for f in fields(cls))


@dataclass(frozen=True, eq=False)
class Benchmark:
    spec: BenchSpec
    bank: ExpertBank
    mixtures: tuple  # RoutingWeights per task type
    reference_pool: tuple  # Sample
    test_split: tuple  # Sample


def ground_truth_mixtures(spec: BenchSpec) -> tuple:
    """One mixture per task type, supported on ``support_size`` experts.

    Unless ``spec.skew_in_support`` is set, the router's favored expert is
    left out of every support, so leaning on it is always a mistake.
    """
    rng = rng_stream(spec.seed, MIXTURES)
    E, T = spec.expert_count, spec.task_type_count
    pool = np.arange(E)
    if not spec.skew_in_support and spec.support_size < E:
        pool = pool[pool != spec.skew_target]
    while True:
        supports = [np.sort(rng.choice(pool, size=spec.support_size, replace=False)) for _ in range(T)]
        distinct = {tuple(s) for s in supports}
        if T < 2 or len(distinct) >= 2 or spec.support_size == pool.size:
            break
    out = []
    for s in supports:
        w = np.zeros(E)
        w[s] = rng.dirichlet(np.ones(spec.support_size))
        out.append(RoutingWeights(w / w.sum()))
    return tuple(out)


def embed(x: ModelInput, spec: BenchSpec, stream: np.random.Generator) -> TaskEmbedding:
    """One-hot task type plus isotropic Gaussian noise."""
    if not 0 <= x.task_type < spec.task_type_count:
        raise InvalidInputError(f"task_type {x.task_type} out of range")
    v = np.zeros(spec.task_type_count)
    v[x.task_type] = 1.0
    if spec.embedding_noise_sigma > 0:
        v = v + spec.embedding_noise_sigma * stream.standard_normal(spec.task_type_count)
    return TaskEmbedding(v)


def generate(spec: BenchSpec) -> Benchmark:
    """Expert bank, ground-truth mixtures, and labeled reference/test pools.

    Sample ids run over the reference pool first (grouped by task type) and
    then over the test split.
    """
    D, E, C, T = spec.feature_dim, spec.expert_count, spec.class_count, spec.task_type_count
    rng = rng_stream(spec.seed, EXPERTS)
    W = rng.standard_normal((E, C, D)) * (spec.expert_scale / np.sqrt(D))
    b = rng.standard_normal((E, C)) * (0.1 * spec.expert_scale)
    if spec.center_experts:
        W = W - W.mean(axis=0)
        b = b - b.mean(axis=0)
    bank = ExpertBank(W, b)
    mixtures = ground_truth_mixtures(spec)

    # task-dependent feature means make task types visible to the router
    means = np.zeros((T, D))
    if spec.task_feature_shift > 0:
        u = rng_stream(spec.seed, TASK_MEANS).standard_normal((T, D))
        means = spec.task_feature_shift * u / np.linalg.norm(u, axis=1, keepdims=True)
    feat_rng = rng_stream(spec.seed, FEATURES)
    emb_rng = rng_stream(spec.seed, EMBEDDINGS)
    pools = {"ref": [], "test": []}
    sid = 0
    for split, per_type in (("ref", spec.ref_per_type), ("test", spec.test_per_type)):
        for t in range(T):
            X = feat_rng.standard_normal((per_type, D)) + means[t]
            labels = np.argmax(np.einsum("e,nec->nc", mixtures[t].weights, bank.batch_logits(X)), axis=1)
            for f, y in zip(X, labels):
                x = ModelInput(f, t)
                pools[split].append(Sample(sid, x, embed(x, spec, emb_rng), Label(int(y))))
                sid += 1
    return Benchmark(spec, bank, mixtures, tuple(pools["ref"]), tuple(pools["test"]))


def train_router(pool, bank: ExpertBank, spec: BenchSpec) -> Router:
    """Full-batch gradient descent on cross-entropy minus a skew bonus.

    Objective: mean CE(forward(x, route(x)), y) - skew_strength * mean r_s(x)
    where ``s`` is ``spec.skew_target``.
    """
    if not pool:
        raise InvalidInputError("router training pool is empty")
    X = np.stack([s.input.features for s in pool])
    y = np.array([s.label.class_id for s in pool])
    if np.unique(y).size < 2:
        raise InvalidInputError("router training pool has a single class")
    N, D = X.shape
    E = bank.expert_count
    logits = bank.batch_logits(X)
    Y = np.eye(bank.class_count)[y]
    rng = rng_stream(spec.seed, ROUTER_INIT)
    R = spec.router_init_scale * rng.standard_normal((E, D))
    bias = np.zeros(E)
    for _ in range(spec.router_steps):
        r = softmax(X @ R.T + bias)
        p = softmax(np.einsum("ne,nec->nc", r, logits))
        g_r = np.einsum("nec,nc->ne", logits, (p - Y) / N)
        g_r[:, spec.skew_target] -= spec.skew_strength / N
        g_a = r * (g_r - np.sum(r * g_r, axis=1, keepdims=True))
        R -= spec.router_lr * (g_a.T @ X)
        bias -= spec.router_lr * g_a.sum(axis=0)
    return Router(R, bias)


def build_reference_set(pool, bank: ExpertBank, router, cap_per_type: int = 5000,
                        seed: int = 0) -> ReferenceSet:
    """Keep the pool samples the routed model gets right, capped per task type."""
    if not pool:
        raise InvalidInputError("reference pool is empty")
    by_type = {}
    for s in pool:
        r = router.route(s.input)
        if bank.predict(s.input, r) == s.label:
            by_type.setdefault(s.input.task_type, []).append((s, r))
    if not by_type:
        raise EmptyReferenceError("router predicts no pool sample correctly")
    rng = rng_stream(seed, SUBSAMPLE)
    entries = []
    for t in sorted(by_type):
        kept = by_type[t]
        if len(kept) > cap_per_type:
            pick = np.sort(rng.choice(len(kept), size=cap_per_type, replace=False))
            kept = [kept[i] for i in pick]
        for s, r in kept:
            entries.append(ReferenceEntry.verified(bank, s.input, s.embedding, r, s.label, s.sample_id))
    return seal(entries)


@dataclass(frozen=True, eq=False)
class Prepared:
    """Everything an evaluation needs, built from one :class:`BenchSpec`."""

    bench: Benchmark
    router: Router
    refset: ReferenceSet

    @property
    def bank(self) -> ExpertBank:
        return self.bench.bank

    @property
    def test_split(self) -> tuple:
        return self.bench.test_split


def prepare(spec: BenchSpec) -> Prepared:
    bench = generate(spec)
    router = train_router(bench.reference_pool, bench.bank, spec)
    refset = build_reference_set(bench.reference_pool, bench.bank, router, spec.cap_per_type, spec.seed)
    return Prepared(bench, router, refset)


def oracle_accuracy(bench: Benchmark, samples=None) -> float:
    samples = bench.test_split if samples is None else samples
    hits = [bench.bank.predict(s.input, bench.mixtures[s.input.task_type]) == s.label for s in samples]
    return float(np.mean(hits))
