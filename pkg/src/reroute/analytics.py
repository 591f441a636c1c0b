"""Evaluation, transition accounting, expert-shift matrices, sweeps and costs."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import InvalidInputError
from .kernels import KernelSpec
from .refindex import NeighborhoodSpec
from .rerouting import ScheduleSpec, StrategySpec, Trajectory, apply

CELLS = ("incorrect_to_correct", "correct_to_incorrect", "correct_to_correct", "incorrect_to_incorrect")
SWEEP_AXES = ("k", "epsilon", "kernel", "steps", "schedule")


@dataclass
class SampleOutcome:
    sample_id: int
    task_type: int
    label: int
    base_pred: int
    final_pred: int
    initial_top1: int
    final_top1: int
    final_weights: np.ndarray
    trajectory: Trajectory | None = None

    @property
    def base_correct(self) -> bool:
        return self.base_pred == self.label

    @property
    def final_correct(self) -> bool:
        return self.final_pred == self.label

    def to_record(self, strategy: str) -> dict:
        rec = {
            "strategy": strategy,
            "sample_id": self.sample_id,
            "task_type": self.task_type,
            "label": self.label,
            "base_pred": self.base_pred,
            "final_pred": self.final_pred,
            "base_correct": self.base_correct,
            "final_correct": self.final_correct,
            "initial_top1": self.initial_top1,
            "final_top1": self.final_top1,
            "final_weights": self.final_weights.tolist(),
        }
        if self.trajectory is not None:
            t = self.trajectory
            rec.update(steps=t.steps, forward_evals=t.forward_evals, grad_evals=t.grad_evals,
                       noop=t.noop)
        return rec


@dataclass
class EvalResult:
    strategy: StrategySpec
    outcomes: list
    accuracy: float
    base_accuracy: float
    per_task_accuracy: dict
    # kept for per-step recomputation; not exported
    bank: object = field(default=None, repr=False)
    samples: tuple = field(default=(), repr=False)

    @property
    def n(self) -> int:
        return len(self.outcomes)

    @property
    def trajectories_retained(self) -> bool:
        return all(o.trajectory is not None for o in self.outcomes)


def _fold_mean(flags) -> float:
    total = 0
    count = 0
    for f in flags:
        total += int(f)
        count += 1
    return total / count if count else 0.0


def _check_disjoint(refset, test_split):
    ref_ids = {e.sample_id for e in refset.entries}
    clash = [s.sample_id for s in test_split if s.sample_id in ref_ids]
    if clash:
        raise InvalidInputError(f"test samples also in the reference set: ids {clash[:5]}")
    ref_feats = {e.input.features.tobytes() for e in refset.entries}
    clash = [s.sample_id for s in test_split if s.input.features.tobytes() in ref_feats]
    if clash:
        raise InvalidInputError(f"test samples duplicate reference inputs: ids {clash[:5]}")


def evaluate(bank, router, refset, test_split, strategy: StrategySpec,
             retain_trajectories: bool = True, threads: int = 1) -> EvalResult:
    """Route every test sample, re-route it with ``strategy`` and score both.

    Per-sample work is independent and may run on ``threads`` workers; results
    are folded in test-split order so the output does not depend on threading.
    """
    test_split = tuple(test_split)
    _check_disjoint(refset, test_split)
    pass_label = strategy.kind == "oracle_gd"

    def one(sample):
        r0 = router.route(sample.input)
        final, traj = apply(strategy, bank, refset, sample, r0,
                            label=sample.label if pass_label else None)
        return SampleOutcome(
            sample_id=sample.sample_id,
            task_type=sample.input.task_type,
            label=sample.label.class_id,
            base_pred=bank.predict(sample.input, r0).class_id,
            final_pred=bank.predict(sample.input, final).class_id,
            initial_top1=r0.top1,
            final_top1=final.top1,
            final_weights=final.weights,
            trajectory=traj if retain_trajectories else None,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(one, test_split))
    else:
        outcomes = [one(s) for s in test_split]

    per_task = {}
    for t in sorted({o.task_type for o in outcomes}):
        per_task[t] = _fold_mean(o.final_correct for o in outcomes if o.task_type == t)
    return EvalResult(
        strategy=strategy,
        outcomes=outcomes,
        accuracy=_fold_mean(o.final_correct for o in outcomes),
        base_accuracy=_fold_mean(o.base_correct for o in outcomes),
        per_task_accuracy=per_task,
        bank=bank,
        samples=test_split,
    )


@dataclass
class TransitionTable:
    counts: dict
    total: int
    per_step: list | None = None  # one counts dict per optimization step

    @property
    def percentages(self) -> dict:
        return {c: 100.0 * self.counts[c] / self.total if self.total else 0.0 for c in CELLS}

    def to_dict(self) -> dict:
        d = {"counts": dict(self.counts), "percentages": self.percentages, "total": self.total}
        if self.per_step is not None:
            d["per_step"] = self.per_step
        return d


def _cell(before: bool, after: bool) -> str:
    return f"{'correct' if before else 'incorrect'}_to_{'correct' if after else 'incorrect'}"


def _count(pairs) -> dict:
    counts = dict.fromkeys(CELLS, 0)
    for before, after in pairs:
        counts[_cell(before, after)] += 1
    return counts


def transitions(result: EvalResult, per_step: bool = False) -> TransitionTable:
    """Partition the test set by (base correct, re-routed correct).

    With ``per_step`` the predictions at every trajectory step are recomputed
    from the stored weights; shorter trajectories hold their final weights.
    """
    table = TransitionTable(
        counts=_count((o.base_correct, o.final_correct) for o in result.outcomes),
        total=result.n,
    )
    if not per_step:
        return table
    if not result.trajectories_retained:
        raise InvalidInputError(
            "per-step transitions need trajectories; rerun with retain_trajectories enabled"
        )
    if result.bank is None or len(result.samples) != result.n:
        raise InvalidInputError("per-step transitions need the model and test inputs")
    preds = [o.trajectory.predictions(result.bank, s.input)
             for o, s in zip(result.outcomes, result.samples)]
    horizon = max(len(p) for p in preds)
    table.per_step = []
    for t in range(horizon):
        table.per_step.append(_count(
            (o.base_correct, p[min(t, len(p) - 1)] == o.label)
            for o, p in zip(result.outcomes, preds)
        ))
    return table


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


@dataclass
class ExpertShiftMatrix:
    """Top-1 expert before (rows) and after (columns) re-routing."""

    to_correct: np.ndarray
    to_incorrect: np.ndarray

    @property
    def combined(self) -> np.ndarray:
        return self.to_correct + self.to_incorrect

    @property
    def total(self) -> int:
        return int(self.combined.sum())

    @property
    def initial_distribution(self) -> np.ndarray:
        return self.combined.sum(axis=1)

    @property
    def final_distribution(self) -> np.ndarray:
        return self.combined.sum(axis=0)

    @property
    def initial_entropy(self) -> float:
        return _entropy(self.initial_distribution)

    @property
    def final_entropy(self) -> float:
        return _entropy(self.final_distribution)

    @property
    def unchanged(self) -> int:
        return int(np.trace(self.combined))

    def to_dict(self) -> dict:
        return {
            "to_correct": self.to_correct.tolist(),
            "to_incorrect": self.to_incorrect.tolist(),
            "initial_top1_counts": self.initial_distribution.tolist(),
            "final_top1_counts": self.final_distribution.tolist(),
            "initial_entropy": self.initial_entropy,
            "final_entropy": self.final_entropy,
        }


def expert_shift(result: EvalResult, expert_count: int | None = None) -> ExpertShiftMatrix:
    E = expert_count or (result.bank.expert_count if result.bank is not None else
                         1 + max(max(o.initial_top1, o.final_top1) for o in result.outcomes))
    good = np.zeros((E, E), dtype=np.int64)
    bad = np.zeros((E, E), dtype=np.int64)
    for o in result.outcomes:
        (good if o.final_correct else bad)[o.initial_top1, o.final_top1] += 1
    return ExpertShiftMatrix(good, bad)


@dataclass
class CostSummary:
    rows: dict  # strategy name -> {"forward_evals", "grad_evals", "model_evals", "steps"}

    def to_dict(self) -> dict:
        return {name: dict(row) for name, row in self.rows.items()}


def cost_summary(results) -> CostSummary:
    """Mean evaluation counters per strategy."""
    rows = {}
    for res in results:
        if not res.trajectories_retained:
            raise InvalidInputError(f"{res.strategy.name}: cost summary needs trajectories")
        trajs = [o.trajectory for o in res.outcomes]
        fwd = _fold_mean_values(t.forward_evals for t in trajs)
        grad = _fold_mean_values(t.grad_evals for t in trajs)
        rows[res.strategy.name] = {
            "forward_evals": fwd,
            "grad_evals": grad,
            "model_evals": fwd + grad,
            "steps": _fold_mean_values(t.steps for t in trajs),
        }
    return CostSummary(rows)


def _fold_mean_values(values) -> float:
    total = 0.0
    count = 0
    for v in values:
        total += v
        count += 1
    return total / count if count else 0.0


def _schedule_value(value) -> ScheduleSpec:
    if isinstance(value, ScheduleSpec):
        return value
    if isinstance(value, dict):
        return ScheduleSpec(**value)
    if isinstance(value, str):
        family, _, rate = value.partition(":")
        if family == "fixed":
            return ScheduleSpec("fixed", lr=float(rate or 1e-3))
        if family in ("cosine", "step_decay") and not rate:
            return ScheduleSpec(family)
    raise InvalidInputError(f"invalid schedule value {value!r}")


def vary(spec: StrategySpec, axis: str, value) -> StrategySpec:
    """Copy of ``spec`` with one ablation axis set to ``value``."""
    try:
        if axis == "k":
            nb = NeighborhoodSpec(mode="knn", k=int(value), space=spec.neighborhood.space)
            return replace(spec, neighborhood=nb, name=f"{spec.name}[k={value}]")
        if axis == "epsilon":
            nb = NeighborhoodSpec(mode="epsilon_ball", epsilon=float(value), space=spec.neighborhood.space)
            return replace(spec, neighborhood=nb, name=f"{spec.name}[epsilon={value}]")
        if axis == "kernel":
            kernel = value if isinstance(value, KernelSpec) else (
                KernelSpec.from_dict(value) if isinstance(value, dict) else KernelSpec(family=str(value)))
            return replace(spec, kernel=kernel, name=f"{spec.name}[kernel={kernel.family}]")
        if axis == "steps":
            steps = int(value)
            if steps < 0:
                raise InvalidInputError("steps must be non-negative")
            if spec.kind == "mode_finding":
                new = replace(spec, mode_max_steps=steps)
            elif spec.kind == "kernel_regression":
                new = replace(spec, linesearch_iters=steps)
            else:
                new = replace(spec, schedule=replace(spec.schedule, step_count=steps))
            return replace(new, name=f"{spec.name}[steps={steps}]")
        if axis == "schedule":
            sched = _schedule_value(value)
            sched = replace(sched, step_count=spec.schedule.step_count)
            return replace(spec, schedule=sched, name=f"{spec.name}[schedule={sched.family}]")
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"invalid {axis} value {value!r}: {exc}") from exc
    raise InvalidInputError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


@dataclass
class SweepTable:
    axis: str
    rows: list  # dicts ranked by accuracy, best first
    results: list  # EvalResult in the order of the requested values

    def to_dict(self) -> dict:
        return {"axis": self.axis, "rows": self.rows}


def sweep(axis: str, values, base: StrategySpec, bank, router, refset, test_split,
          threads: int = 1) -> SweepTable:
    """One evaluation per axis value with everything else held fixed."""
    values = list(values)
    if not values:
        raise InvalidInputError("sweep needs at least one value")
    specs = [vary(base, axis, v) for v in values]
    results = [evaluate(bank, router, refset, test_split, s, threads=threads) for s in specs]
    costs = cost_summary(results).rows
    rows = []
    for v, s, r in zip(values, specs, results):
        value = v.to_dict() if hasattr(v, "to_dict") else v
        rows.append({"value": value, "strategy": s.name, "accuracy": r.accuracy,
                     "base_accuracy": r.base_accuracy, **costs[s.name]})
    order = sorted(range(len(rows)), key=lambda i: (-rows[i]["accuracy"], i))
    return SweepTable(axis, [rows[i] for i in order], results)


def summary(result: EvalResult) -> dict:
    """Summary document with fixed field order."""
    out = {
        "strategy": result.strategy.to_dict(),
        "accuracy": {
            "final": result.accuracy,
            "base": result.base_accuracy,
            "per_task": {str(k): v for k, v in result.per_task_accuracy.items()},
        },
        "transitions": transitions(result).to_dict(),
        "expert_shift": expert_shift(result).to_dict(),
        "cost": cost_summary([result]).rows[result.strategy.name]
        if result.trajectories_retained else None,
    }
    return out
