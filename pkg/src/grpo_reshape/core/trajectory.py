"""
Assistant-only mask algebra over trajectories.
"""
from typing import List

import numpy as np

from ..exceptions import MalformedTrajectoryError
from ..models.trajectory import Trajectory, structure_problems


def build_mask(trajectory: Trajectory) -> np.ndarray:
    """
    Assistant-only mask: 1 on assistant-generated tokens, 0 on echo.

    Args:
        trajectory: Trajectory with tokens populated

    Returns:
        Float vector with one entry per token
    """
    return np.array([t.role_flag for t in trajectory.tokens], dtype=float)


def effective_mask(trajectory: Trajectory) -> np.ndarray:
    """
    Mask after routing: the override (when present) times the role mask.

    Args:
        trajectory: Routed trajectory

    Returns:
        Float vector with one entry per token
    """
    mask = build_mask(trajectory)
    override = trajectory.loss_mask_override
    if override is None:
        return mask
    if len(override) != len(mask):
        raise MalformedTrajectoryError(
            f"loss_mask_override has {len(override)} entries for {len(mask)} tokens"
        )
    return mask * np.asarray(override, dtype=float)


def step_token_counts(trajectory: Trajectory) -> List[int]:
    """
    Active assistant tokens per step (n_i).

    Args:
        trajectory: Trajectory whose step spans and role flags agree

    Returns:
        n_i for every step, recounted from the role flags

    Raises:
        MalformedTrajectoryError: If spans and role flags disagree
    """
    problems = structure_problems(trajectory.steps, trajectory.tokens)
    if problems:
        raise MalformedTrajectoryError("; ".join(problems))
    counts = [0] * len(trajectory.steps)
    for token in trajectory.tokens:
        counts[token.step_index] += token.role_flag
    return counts


def step_indices(trajectory: Trajectory) -> np.ndarray:
    """Owning step of every token, i(t)."""
    return np.array([t.step_index for t in trajectory.tokens], dtype=int)


def last_assistant_step(trajectory: Trajectory) -> int:
    """
    Index of the final step carrying assistant tokens.

    Returns:
        Step index, or -1 when the trajectory has no assistant tokens
    """
    for i in range(len(trajectory.steps) - 1, -1, -1):
        if trajectory.steps[i].n_i > 0:
            return i
    return -1
