"""Curriculum transfer from a low-fidelity gridworld to a continuous crafting arena."""

from .errors import CurricraftError
from .params import GoalSpec, ParamRanges, TaskParams

__version__ = "0.1.0"

__all__ = [
    "CurricraftError",
    "GoalSpec",
    "ParamRanges",
    "TaskParams",
    "__version__",
]
