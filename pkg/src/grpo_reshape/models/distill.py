"""
Models for KL-shaped distillation baselines.
"""
from typing import Literal, Optional

from pydantic import validator

from .base import ReshapeModel


class KlConfig(ReshapeModel):
    """
    How token KL is computed and aggregated.

    Attributes:
        direction: ``teacher_to_student`` is KL(teacher || student),
            ``student_to_teacher`` is KL(student || teacher)
        aggregation: ``masked_sum``, ``masked_mean`` or ``per_token_in_advantage``
        beta: Penalty weight
        topk: Optional top-k truncation with a lumped tail bucket
    """
    direction: Literal["teacher_to_student", "student_to_teacher"] = "student_to_teacher"
    aggregation: Literal["masked_sum", "masked_mean", "per_token_in_advantage"] = "masked_sum"
    beta: float = 0.02
    topk: Optional[int] = None

    @validator("beta")
    def validate_beta(cls, v):
        """Penalty weights are non-negative."""
        if v < 0:
            raise ValueError("beta must be >= 0")
        return v

    @validator("topk")
    def validate_topk(cls, v):
        """Truncation keeps at least one token."""
        if v is not None and v < 1:
            raise ValueError("topk must be a positive integer")
        return v


class DistillMode(ReshapeModel):
    """
    Which privileged-hint distillation variant runs.

    Attributes:
        mode: ``pi_distill`` (teacher samples, batch expansion) or ``opsd``
            (student samples, teacher scores)
        alpha: Teacher-term mixing weight (pi_distill only)
    """
    mode: Literal["pi_distill", "opsd"]
    alpha: float = 0.5

    @validator("alpha")
    def validate_alpha(cls, v):
        """Mixing weights lie in [0, 1]."""
        if not 0.0 <= v <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        return v
