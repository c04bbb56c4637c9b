"""
Group-normalised advantages and the clipped, token-weighted GRPO loss.

The loss of one trajectory is the w_t-weighted sum of clipped policy-gradient
terms (minus the KL anchor, plus the optional entropy bonus) divided by
max(1, sum of routed mask). The batch loss is the negative mean over all
trajectories, each scaled by its copy weight. Gradients are analytic with
respect to the tabular logits.
"""
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import log_softmax

from .policy import PolicyParams
from .trajectory import effective_mask
from ..config import GRPO_DEFAULTS
from ..exceptions import DegenerateGroupError
from ..models.grpo import ClipConfig, RolloutGroup
from ..models.trajectory import Trajectory


class LossResult(NamedTuple):
    """Loss value, gradient and diagnostics of one batch."""
    loss: float
    grad: Optional[Dict[str, np.ndarray]]
    policy_term: float
    kl_term: float
    entropy: float
    objectives: List[float]


def group_advantages(
    rewards: Sequence[float],
    eps: float = GRPO_DEFAULTS["degeneracy_eps"],
) -> List[float]:
    """
    Normalise rewards within a group: (R_k - mean) / population std.

    Args:
        rewards: One reward per group member
        eps: Groups whose std falls below this get all-zero advantages

    Raises:
        DegenerateGroupError: If the group has fewer than two members
    """
    r = np.asarray(rewards, dtype=float)
    if r.size < 2:
        raise DegenerateGroupError(f"group of {r.size} cannot be normalised")
    std = float(r.std())
    if std < eps:
        return [0.0] * r.size
    return ((r - r.mean()) / std).tolist()


def clipped_term(rho: float, advantage: float, cfg: ClipConfig) -> float:
    """min(rho * A, clip(rho, 1 - eps_lo, 1 + eps_hi) * A)."""
    clipped = min(max(rho, 1.0 - cfg.eps_lo), 1.0 + cfg.eps_hi)
    return min(rho * advantage, clipped * advantage)


def _clipped_slope(rho: float, advantage: float, cfg: ClipConfig) -> float:
    """d clipped_term / d log rho."""
    clipped = min(max(rho, 1.0 - cfg.eps_lo), 1.0 + cfg.eps_hi)
    if rho * advantage <= clipped * advantage:
        return rho * advantage
    return 0.0


def low_var_kl(logp_cur: float, logp_ref: float) -> float:
    """
    Non-negative KL estimator r - log r - 1 with r = exp(logp_ref - logp_cur).
    """
    d = logp_ref - logp_cur
    return float(np.expm1(d) - d)


def build_group(
    prompt_id: str,
    trajectories: List[Trajectory],
    eps: float = GRPO_DEFAULTS["degeneracy_eps"],
) -> RolloutGroup:
    """
    Group trajectories and compute their advantages from the training reward.

    Args:
        prompt_id: Shared prompt
        trajectories: All K members, abnormal exits included
        eps: Degeneracy threshold
    """
    rewards = [t.training_reward for t in trajectories]
    return RolloutGroup(
        prompt_id=prompt_id,
        trajectories=trajectories,
        rewards=rewards,
        advantages=group_advantages(rewards, eps),
        k=len(trajectories),
    )


def grpo_loss(
    groups: Sequence[RolloutGroup],
    cfg: ClipConfig,
    params: Optional[PolicyParams] = None,
    kl_beta_in_advantage: float = 0.0,
) -> LossResult:
    """
    Clipped token-weighted GRPO loss and its gradient.

    Token weights come from each trajectory's stored ``token_weights`` (the
    effective coefficients w_t) and default to the routed mask. When
    ``params`` is given, current log-probabilities are recomputed from it and
    the gradient is returned; otherwise the stored ``logp_current`` values are
    used and no gradient is produced.

    Args:
        groups: Rollout groups with advantages
        cfg: Clip and regulariser coefficients
        params: Current policy parameters
        kl_beta_in_advantage: Weight of stored per-token KL subtracted from
            the advantage at each token

    Returns:
        LossResult
    """
    if params is None and cfg.entropy_coef != 0:
        raise ValueError("the entropy bonus needs policy parameters")
    grad: Optional[Dict[str, np.ndarray]] = {} if params is not None else None
    cache: Dict[str, np.ndarray] = {}

    def row_logp(key: str) -> np.ndarray:
        if key not in cache:
            cache[key] = log_softmax(params.row(key))
        return cache[key]

    trajectories = [(g, i) for g in groups for i in range(len(g.trajectories))]
    n = max(1, len(trajectories))
    loss = policy_total = kl_total = 0.0
    entropy_sum = 0.0
    entropy_count = 0
    objectives: List[float] = []

    for group, i in trajectories:
        traj = group.trajectories[i]
        advantage = group.advantages[i] if group.advantages else 0.0
        mask = effective_mask(traj)
        weights = (
            np.asarray(traj.token_weights, dtype=float)
            if traj.token_weights is not None
            else mask
        )
        denom = max(1.0, float(mask.sum()))
        scale = traj.copy_weight / (n * denom)
        objective = policy_part = kl_part = 0.0

        for t, token in enumerate(traj.tokens):
            w = weights[t]
            if w == 0.0:
                continue
            a_t = advantage
            if traj.token_kl is not None and kl_beta_in_advantage:
                a_t = advantage - kl_beta_in_advantage * traj.token_kl[t]
            if params is not None:
                lp = row_logp(token.context)
                logp_cur = float(lp[token.token_id])
            else:
                logp_cur = token.logp_current
            rho = float(np.exp(logp_cur - token.logp_old))
            pg = clipped_term(rho, a_t, cfg)
            kl = low_var_kl(logp_cur, token.logp_ref)
            term = pg - cfg.kl_coef * kl
            policy_part += w * pg
            kl_part += w * kl

            if params is not None:
                p = np.exp(lp)
                h = float(-np.sum(p * lp))
                entropy_sum += h
                entropy_count += 1
                term += cfg.entropy_coef * h
                r = float(np.exp(token.logp_ref - logp_cur))
                g_logp = _clipped_slope(rho, a_t, cfg) - cfg.kl_coef * (1.0 - r)
                d_row = -g_logp * p
                d_row[token.token_id] += g_logp
                if cfg.entropy_coef:
                    d_row += cfg.entropy_coef * (-p * (lp + h))
                acc = grad.setdefault(token.context, np.zeros_like(lp))
                acc -= scale * w * d_row
            objective += w * term

        objectives.append(objective / denom)
        loss -= traj.copy_weight * objective / (n * denom)
        policy_total += traj.copy_weight * policy_part / (n * denom)
        kl_total += traj.copy_weight * kl_part / (n * denom)

    return LossResult(
        loss=loss,
        grad=grad,
        policy_term=policy_total,
        kl_term=kl_total,
        entropy=entropy_sum / entropy_count if entropy_count else 0.0,
        objectives=objectives,
    )
