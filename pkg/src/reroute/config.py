"""Experiment configuration files (YAML) with line-precise validation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace

import yaml

from .core import InvalidInputError
from .kernels import KernelSpec
from .refindex import NeighborhoodSpec
from .rerouting import ScheduleSpec, StrategySpec
from .synthbench import BenchSpec

TOP_KEYS = ("seed", "output_dir", "retain_trajectories", "per_step_transitions", "threads",
            "benchmark_dir", "bench", "strategies", "sweeps")
BENCH_KEYS = tuple(n for n in BenchSpec.field_names() if n != "seed")
STRATEGY_KEYS = ("name", "kind", "neighborhood", "kernel", "schedule", "mode_alpha",
                 "mode_max_steps", "mode_tol", "linesearch_iters", "fixed_alpha")
NEIGHBORHOOD_KEYS = ("mode", "k", "epsilon", "space")
KERNEL_KEYS = ("family", "bandwidth", "polynomial_degree", "matern_nu")
SCHEDULE_KEYS = tuple(f.name for f in fields(ScheduleSpec))
SWEEP_KEYS = ("axis", "values", "strategy")


class ConfigError(InvalidInputError):
    """Invalid configuration; the message names the file and line."""


def default_strategies() -> list:
    return [
        StrategySpec.default("identity", name="base"),
        StrategySpec.default("mode_finding"),
        StrategySpec.default("kernel_regression"),
        StrategySpec.default("ngd"),
        StrategySpec.default("oracle_gd", name="oracle"),
    ]


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    strategy: str

    def to_dict(self) -> dict:
        return {"axis": self.axis, "values": list(self.values), "strategy": self.strategy}


@dataclass(frozen=True)
class ExperimentConfig:
    bench: BenchSpec = BenchSpec()
    strategies: tuple = field(default_factory=lambda: tuple(default_strategies()))
    sweeps: tuple = ()
    output_dir: str = "runs/default"
    seed: int = 0
    retain_trajectories: bool = True
    per_step_transitions: bool = False
    threads: int = 1
    benchmark_dir: str | None = None

    def __post_init__(self):
        if self.bench.seed != self.seed:
            object.__setattr__(self, "bench", replace(self.bench, seed=self.seed))
        names = [s.name for s in self.strategies]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate strategy names: {names}")
        for sw in self.sweeps:
            if sw.strategy not in names:
                raise ConfigError(f"sweep refers to unknown strategy {sw.strategy!r}")
        if self.per_step_transitions and not self.retain_trajectories:
            raise ConfigError(
                "per_step_transitions needs retain_trajectories: per-step analysis "
                "recomputes predictions from stored trajectories"
            )
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def to_dict(self) -> dict:
        """Resolved configuration (no runtime-only fields)."""
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "retain_trajectories": self.retain_trajectories,
            "per_step_transitions": self.per_step_transitions,
            "benchmark_dir": self.benchmark_dir,
            "bench": {k: v for k, v in self.bench.to_dict().items() if k != "seed"},
            "strategies": [s.to_dict() for s in self.strategies],
            "sweeps": [s.to_dict() for s in self.sweeps],
        }

    def digest(self) -> str:
        """Digest of everything that determines the outputs (threads excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# -- parsing -------------------------------------------------------------

def _where(source, node) -> str:
    return f"{source}:{node.start_mark.line + 1}"


def _mapping(node, source, keys, what):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{_where(source, node)}: {what} must be a mapping")
    out = {}
    for k, v in node.value:
        if k.value not in keys:
            raise ConfigError(f"{_where(source, k)}: unknown key {k.value!r} in {what}")
        if k.value in out:
            raise ConfigError(f"{_where(source, k)}: duplicate key {k.value!r} in {what}")
        out[k.value] = v
    return out


def _scalar(node, source, kind, what):
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"{_where(source, node)}: {what} must be a scalar")
    text = node.value
    try:
        if kind is bool:
            low = text.lower()
            if low in ("true", "yes", "on"):
                return True
            if low in ("false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind == "float_or_null":
            return None if text in ("", "null", "~") else float(text)
        if kind == "str_or_null":
            return None if text in ("", "null", "~") else text
        return text
    except ValueError:
        raise ConfigError(f"{_where(source, node)}: {what} expects {getattr(kind, '__name__', kind)}, got {text!r}") from None


def _sequence(node, source, what):
    if not isinstance(node, yaml.SequenceNode):
        raise ConfigError(f"{_where(source, node)}: {what} must be a list")
    return node.value


def _build(cls, node, source, what, kw):
    try:
        return cls(**kw)
    except (InvalidInputError, TypeError, ValueError) as exc:
        raise ConfigError(f"{_where(source, node)}: invalid {what}: {exc}") from None


_BENCH_TYPES = {f.name: f.type for f in fields(BenchSpec)}


def _bench(node, source) -> dict:
    m = _mapping(node, source, BENCH_KEYS, "bench")
    kinds = {"int": int, "float": float, "bool": bool}
    return {k: _scalar(v, source, kinds[_BENCH_TYPES[k]], f"bench.{k}") for k, v in m.items()}


def _neighborhood(node, source, what, space_default):
    m = _mapping(node, source, NEIGHBORHOOD_KEYS, what)
    kinds = {"mode": str, "k": int, "epsilon": float, "space": str}
    kw = {k: _scalar(v, source, kinds[k], f"{what}.{k}") for k, v in m.items()}
    kw.setdefault("space", space_default)
    return _build(NeighborhoodSpec, node, source, what, kw)


def _kernel(node, source, what):
    m = _mapping(node, source, KERNEL_KEYS, what)
    kw = {}
    for k, v in m.items():
        if k == "bandwidth":
            text = _scalar(v, source, str, f"{what}.bandwidth")
            kw[k] = None if text == "median" else _scalar(v, source, float, f"{what}.bandwidth")
        else:
            kind = {"family": str, "polynomial_degree": int, "matern_nu": float}[k]
            kw[k] = _scalar(v, source, kind, f"{what}.{k}")
    return _build(KernelSpec, node, source, what, kw)


def _schedule(node, source, what):
    m = _mapping(node, source, SCHEDULE_KEYS, what)
    kinds = {"family": str, "step_count": int, "period": int}
    kw = {k: _scalar(v, source, kinds.get(k, float), f"{what}.{k}") for k, v in m.items()}
    return _build(ScheduleSpec, node, source, what, kw)


def _strategy(node, source, i):
    what = f"strategies[{i}]"
    m = _mapping(node, source, STRATEGY_KEYS, what)
    if "kind" not in m:
        raise ConfigError(f"{_where(source, node)}: {what} needs a 'kind'")
    kind = _scalar(m["kind"], source, str, f"{what}.kind")
    kw = {"kind": kind}
    space = "routing_weight" if kind == "mode_finding" else "embedding"
    if "neighborhood" in m:
        kw["neighborhood"] = _neighborhood(m["neighborhood"], source, f"{what}.neighborhood", space)
    else:
        kw["neighborhood"] = NeighborhoodSpec(space=space)
    if "kernel" in m:
        kw["kernel"] = _kernel(m["kernel"], source, f"{what}.kernel")
    if "schedule" in m:
        kw["schedule"] = _schedule(m["schedule"], source, f"{what}.schedule")
    kinds = {"name": str, "mode_alpha": float, "mode_max_steps": int, "mode_tol": float,
             "linesearch_iters": int, "fixed_alpha": "float_or_null"}
    for k, kind_ in kinds.items():
        if k in m:
            kw[k] = _scalar(m[k], source, kind_, f"{what}.{k}")
    return _build(StrategySpec, node, source, what, kw)


def _sweep_value(node, source, what):
    if isinstance(node, yaml.ScalarNode):
        text = node.value
        for cast in (int, float):
            try:
                return cast(text)
            except ValueError:
                pass
        return text
    if isinstance(node, yaml.MappingNode):
        return {k.value: _sweep_value(v, source, what) for k, v in node.value}
    raise ConfigError(f"{_where(source, node)}: {what} entries must be scalars or mappings")


def _sweep(node, source, i):
    what = f"sweeps[{i}]"
    m = _mapping(node, source, SWEEP_KEYS, what)
    for k in SWEEP_KEYS:
        if k not in m:
            raise ConfigError(f"{_where(source, node)}: {what} needs {k!r}")
    values = tuple(_sweep_value(v, source, f"{what}.values")
                   for v in _sequence(m["values"], source, f"{what}.values"))
    if not values:
        raise ConfigError(f"{_where(source, m['values'])}: {what}.values is empty")
    return SweepSpec(_scalar(m["axis"], source, str, f"{what}.axis"), values,
                     _scalar(m["strategy"], source, str, f"{what}.strategy"))


def parse_config(text: str, source: str = "<config>", overrides: dict | None = None) -> ExperimentConfig:
    """Parse YAML text into a validated :class:`ExperimentConfig`.

    ``overrides`` (from command-line flags) replace top-level scalars.
    """
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f"{mark.line + 1}" if mark else "?"
        raise ConfigError(f"{source}:{line}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    kw = {}
    if root is not None:
        m = _mapping(root, source, TOP_KEYS, "config")
        scalars = {"seed": int, "output_dir": str, "retain_trajectories": bool,
                   "per_step_transitions": bool, "threads": int, "benchmark_dir": "str_or_null"}
        for k, kind in scalars.items():
            if k in m:
                kw[k] = _scalar(m[k], source, kind, k)
        if "bench" in m:
            kw["bench"] = _build(BenchSpec, m["bench"], source, "bench", _bench(m["bench"], source))
        if "strategies" in m:
            kw["strategies"] = tuple(_strategy(n, source, i)
                                     for i, n in enumerate(_sequence(m["strategies"], source, "strategies")))
        if "sweeps" in m:
            kw["sweeps"] = tuple(_sweep(n, source, i)
                                 for i, n in enumerate(_sequence(m["sweeps"], source, "sweeps")))
    for k, v in (overrides or {}).items():
        if v is not None:
            kw[k] = v
    try:
        return ExperimentConfig(**kw)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path), overrides)


def config_from_dict(d: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Rebuild a config from :meth:`ExperimentConfig.to_dict` output (manifest replay)."""
    return parse_config(yaml.safe_dump(d, sort_keys=False), "<manifest>", overrides)
