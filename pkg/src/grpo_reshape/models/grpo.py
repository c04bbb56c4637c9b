"""
Models for group-relative policy optimisation.
"""
from typing import List

from pydantic import Field, root_validator, validator

from .base import ReshapeModel
from .trajectory import Trajectory
from ..config import GRPO_DEFAULTS


class ClipConfig(ReshapeModel):
    """
    Clipping and regulariser coefficients of the GRPO objective.

    Attributes:
        eps_lo: Lower clip width (ratio floor is 1 - eps_lo)
        eps_hi: Upper clip width (ratio ceiling is 1 + eps_hi)
        kl_coef: Weight of the low-variance KL anchor to the reference policy
        entropy_coef: Weight of the entropy bonus
    """
    eps_lo: float = GRPO_DEFAULTS["eps_lo"]
    eps_hi: float = GRPO_DEFAULTS["eps_hi"]
    kl_coef: float = GRPO_DEFAULTS["kl_coef"]
    entropy_coef: float = GRPO_DEFAULTS["entropy_coef"]

    @validator("eps_lo", "eps_hi")
    def validate_eps(cls, v):
        """Clip widths must be positive."""
        if v <= 0:
            raise ValueError("clip widths must be > 0")
        return v

    @validator("kl_coef")
    def validate_kl(cls, v):
        """The KL weight is non-negative."""
        if v < 0:
            raise ValueError("kl_coef must be >= 0")
        return v


class RolloutGroup(ReshapeModel):
    """
    K same-prompt trajectories and their group-normalised advantages.

    After batch expansion the group holds two copies per rollout and
    ``expanded`` is set; rewards and advantages stay aligned with
    ``trajectories``.

    Attributes:
        prompt_id: Shared prompt
        trajectories: Group members (abnormal exits included)
        rewards: Rewards entering normalisation
        advantages: Group-normalised advantages
        k: Group size
        expanded: Whether the group was batch-expanded
    """
    prompt_id: str
    trajectories: List[Trajectory]
    rewards: List[float] = Field(default_factory=list)
    advantages: List[float] = Field(default_factory=list)
    k: int
    expanded: bool = False

    @root_validator(skip_on_failure=True)
    def validate_sizes(cls, values):
        """Keep K fixed and the per-member lists aligned."""
        k = values["k"]
        n = len(values["trajectories"])
        expected = 2 * k if values.get("expanded") else k
        if n != expected:
            raise ValueError(f"group holds {n} trajectories, expected {expected}")
        for name in ("rewards", "advantages"):
            if values.get(name) and len(values[name]) != n:
                raise ValueError(f"{name} has {len(values[name])} entries for {n} trajectories")
        return values
