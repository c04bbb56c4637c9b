"""
Step-level process scores turned into per-token loss weights.

Positive-advantage trajectories scale each step by s_i / s_bar. Negative ones
invert the ranking with max(2 - s_i / s_bar, 0.1) and rescale by a constant c
so that the token-weighted mass of the trajectory is unchanged.
"""
from typing import List, Literal, Optional, Sequence

import numpy as np

from .trajectory import effective_mask, step_indices, step_token_counts
from ..exceptions import MalformedTrajectoryError, NoActiveTokensError
from ..models.credit import StepWeights
from ..models.trajectory import Trajectory

NEGATIVE_FLOOR = 0.1

Sign = Literal["positive", "negative"]


def mean_score(s: Sequence[float], n: Sequence[int]) -> float:
    """
    Token-weighted mean score, sum(n_i * s_i) / sum(n_i).

    Raises:
        NoActiveTokensError: If no step has active tokens
    """
    if len(s) != len(n):
        raise ValueError(f"{len(s)} scores for {len(n)} steps")
    total = float(np.sum(n))
    if total <= 0:
        raise NoActiveTokensError("no active assistant tokens; use the neutral branch")
    return float(np.dot(np.asarray(n, dtype=float), np.asarray(s, dtype=float)) / total)


def neutral_weights(num_steps: int) -> StepWeights:
    """All multipliers equal to 1."""
    return StepWeights(alpha=[1.0] * num_steps, branch="neutral")


def step_weights(s: Sequence[float], n: Sequence[int], advantage_sign: Sign) -> StepWeights:
    """
    Convert step scores into mass-preserving step multipliers.

    Args:
        s: Process score per step, each in [0, 1]
        n: Active assistant tokens per step
        advantage_sign: Sign of the trajectory's group advantage

    Returns:
        StepWeights; neutral when no token is active or every score is zero
    """
    if len(s) != len(n):
        raise ValueError(f"{len(s)} scores for {len(n)} steps")
    scores = np.asarray(s, dtype=float)
    counts = np.asarray(n, dtype=float)
    if np.any(scores < 0) or np.any(scores > 1):
        raise ValueError("process scores must lie in [0, 1]")
    if np.any(counts < 0):
        raise ValueError("token counts must be >= 0")
    if counts.sum() <= 0:
        return neutral_weights(len(s))
    s_bar = mean_score(scores, counts)
    if s_bar <= 0:
        return neutral_weights(len(s))

    positive = scores / s_bar
    if advantage_sign == "positive":
        return StepWeights(alpha=positive.tolist(), branch="positive")
    if advantage_sign != "negative":
        raise ValueError(f"unknown advantage sign {advantage_sign!r}")

    raw = np.maximum(2.0 - positive, NEGATIVE_FLOOR)
    c = counts.sum() / float(np.dot(counts, raw))
    return StepWeights(alpha=(c * raw).tolist(), branch="negative")


def token_weights(
    weights: StepWeights,
    mask: Sequence[float],
    step_index: Sequence[int],
) -> np.ndarray:
    """
    Broadcast step multipliers onto tokens: w_t = m_t * alpha_{i(t)}.

    Raises:
        MalformedTrajectoryError: If an active token's step has no multiplier
    """
    mask = np.asarray(mask, dtype=float)
    idx = np.asarray(step_index, dtype=int)
    if mask.shape != idx.shape:
        raise ValueError("mask and step_index must have one entry per token")
    alpha = np.asarray(weights.alpha, dtype=float)
    out = np.zeros_like(mask)
    for t in range(len(mask)):
        if mask[t] == 0:
            continue
        if not 0 <= idx[t] < len(alpha):
            raise MalformedTrajectoryError(f"token {t} belongs to step {idx[t]} with no weight")
        out[t] = mask[t] * alpha[idx[t]]
    return out


def eligibility_gate(trajectory: Trajectory) -> Literal["apply_scores", "neutral"]:
    """
    Decide whether process scores may reweight a settled trajectory.

    Scores apply only to normally routed trajectories that compiled and whose
    every step carries a valid score.
    """
    if trajectory.loss_mask_override is not None:
        return "neutral"
    if not trajectory.compile_ok or not trajectory.steps:
        return "neutral"
    if any(step.s_i is None for step in trajectory.steps):
        return "neutral"
    return "apply_scores"


def advantage_sign(advantage: float) -> Optional[Sign]:
    """Branch for an advantage; zero has no branch."""
    if advantage > 0:
        return "positive"
    if advantage < 0:
        return "negative"
    return None


def trajectory_token_weights(
    trajectory: Trajectory,
    advantage: float,
    enabled: bool = True,
) -> np.ndarray:
    """
    Effective per-token coefficients of one trajectory.

    Falls back to the routed assistant-only mask whenever process scores are
    disabled, the trajectory is not eligible, or its advantage is zero.

    Args:
        trajectory: Routed, settled trajectory
        advantage: Its group advantage
        enabled: ``process_scores.enabled``

    Returns:
        w_t for every token
    """
    mask = effective_mask(trajectory)
    sign = advantage_sign(advantage)
    if not enabled or sign is None or eligibility_gate(trajectory) == "neutral":
        return mask
    counts: List[int] = step_token_counts(trajectory)
    scores = [step.s_i for step in trajectory.steps]
    weights = step_weights(scores, counts, sign)
    return token_weights(weights, mask, step_indices(trajectory))
