"""
Models for outcome reward settlement.
"""
from enum import Enum


class SemanticVerdict(str, Enum):
    """Outcome of the semantic check on a compiling repair."""
    CONSISTENT = "consistent"
    INCONSISTENT = "inconsistent"
    SKIPPED = "skipped"
    JUDGE_ERROR = "judge_error"


class RewardScheme(str, Enum):
    """Trajectory-level reward schemes compared by the experiment arms."""
    LAYERED = "layered"
    COMPILE_ONLY = "compile_only"
    BINARY = "binary"
