"""
Models for step-level process credit.
"""
from typing import List, Literal

from .base import ReshapeModel


class StepWeights(ReshapeModel):
    """
    Per-step loss multipliers.

    Attributes:
        alpha: One multiplier per step
        branch: ``positive`` / ``negative`` follow the advantage sign;
            ``neutral`` leaves every multiplier at 1
    """
    alpha: List[float]
    branch: Literal["positive", "negative", "neutral"]
