"""Test-time re-routing of mixture-of-experts routing weights."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    InvalidInputError,
    Label,
    ModelInput,
    ReferenceEntry,
    RoutingWeights,
    Sample,
    TaskEmbedding,
    interpolate,
    simplex_project,
)
from .kernels import KernelSpec  # noqa: E402
from .refindex import NeighborhoodSpec, ReferenceSet, resolve, seal  # noqa: E402
from .rerouting import ScheduleSpec, StrategySpec, apply  # noqa: E402
from .synthbench import BenchSpec, prepare  # noqa: E402
from .toymoe import ExpertBank, Router  # noqa: E402

__all__ = [
    "BenchSpec", "ExpertBank", "InvalidInputError", "KernelSpec", "Label", "ModelInput",
    "NeighborhoodSpec", "ReferenceEntry", "ReferenceSet", "Router", "RoutingWeights", "Sample",
    "ScheduleSpec", "StrategySpec", "TaskEmbedding", "apply", "interpolate", "prepare",
    "resolve", "seal", "simplex_project",
]
