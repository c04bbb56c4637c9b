"""
Token-level KL over assistant tokens and the privileged-hint distillation
baselines built on it.

The teacher is the same parameter table read through hint-conditioned
context keys. Teacher values only ever enter the loss as constants: shaped
rewards, stored log-probabilities and stop-gradient per-token KL.
"""
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import rel_entr

from .grpo import build_group
from .policy import HINT_PREFIX, PolicyParams
from .trajectory import effective_mask
from ..config import GRPO_DEFAULTS
from ..exceptions import DistributionError, MalformedTrajectoryError
from ..models.distill import DistillMode, KlConfig
from ..models.grpo import RolloutGroup
from ..models.trajectory import TokenRecord, Trajectory

NORMALISATION_TOL = 1e-6

BranchPair = Tuple[np.ndarray, np.ndarray]


def _as_distribution(p: Sequence[float], name: str) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DistributionError(f"{name} must be a non-empty vector")
    if np.any(arr < 0):
        raise DistributionError(f"{name} has negative mass")
    if abs(float(arr.sum()) - 1.0) > NORMALISATION_TOL:
        raise DistributionError(f"{name} sums to {float(arr.sum())!r}, not 1")
    return arr


def token_kl(
    p_teacher: Sequence[float],
    p_student: Sequence[float],
    direction: str = "teacher_to_student",
    topk: Optional[int] = None,
) -> float:
    """
    KL divergence between the teacher and student distributions of one token.

    Args:
        p_teacher: Teacher categorical distribution
        p_student: Student categorical distribution over the same vocabulary
        direction: ``teacher_to_student`` for KL(teacher || student),
            ``student_to_teacher`` for KL(student || teacher)
        topk: Sum over the top-k tokens of the first argument only, lumping
            the remaining mass of both distributions into one tail bucket

    Returns:
        Non-negative KL in nats

    Raises:
        DistributionError: If an input is not normalised or shapes differ
    """
    p_t = _as_distribution(p_teacher, "teacher distribution")
    p_s = _as_distribution(p_student, "student distribution")
    if p_t.shape != p_s.shape:
        raise DistributionError(f"vocabularies differ: {p_t.size} vs {p_s.size}")
    if direction == "teacher_to_student":
        p, q = p_t, p_s
    elif direction == "student_to_teacher":
        p, q = p_s, p_t
    else:
        raise ValueError(f"unknown KL direction {direction!r}")

    if topk is None or topk >= p.size:
        return max(0.0, float(np.sum(rel_entr(p, q))))
    if topk < 1:
        raise ValueError("topk must be a positive integer")
    order = np.argsort(-p, kind="stable")
    head, tail = order[:topk], order[topk:]
    kl = float(np.sum(rel_entr(p[head], q[head])))
    kl += float(rel_entr(p[tail].sum(), q[tail].sum()))
    return max(0.0, kl)


def branch_keys(token: TokenRecord) -> Tuple[Optional[str], Optional[str]]:
    """(teacher key, student key) of an assistant token."""
    if token.context is not None and token.context.startswith(HINT_PREFIX):
        return token.context, token.alt_context
    return token.alt_context, token.context


def branch_distributions(
    trajectory: Trajectory,
    params: PolicyParams,
) -> List[Optional[BranchPair]]:
    """
    Teacher and student distributions at every assistant token.

    Args:
        trajectory: Trajectory whose assistant tokens record both branch keys
        params: Parameter snapshot both branches read from

    Returns:
        One ``(p_teacher, p_student)`` pair per token; None on echo tokens

    Raises:
        MalformedTrajectoryError: If an assistant token lacks a branch key
    """
    out: List[Optional[BranchPair]] = []
    for t, token in enumerate(trajectory.tokens):
        if not token.role_flag:
            out.append(None)
            continue
        teacher_key, student_key = branch_keys(token)
        if teacher_key is None or student_key is None:
            raise MalformedTrajectoryError(f"token {t} does not record both branch contexts")
        out.append((params.probs(teacher_key), params.probs(student_key)))
    return out


def masked_kl(
    trajectory: Trajectory,
    cfg: KlConfig,
    distributions: Sequence[Optional[BranchPair]],
) -> Union[float, List[float]]:
    """
    Aggregate token KL over the routed assistant-only mask.

    Args:
        trajectory: Trajectory the distributions belong to
        cfg: Direction, aggregation and truncation
        distributions: Output of ``branch_distributions``

    Returns:
        The masked sum or masked mean; for ``per_token_in_advantage`` the
        per-token vector (zero off the mask)
    """
    mask = effective_mask(trajectory)
    if len(distributions) != len(mask):
        raise MalformedTrajectoryError(
            f"{len(distributions)} distributions for {len(mask)} tokens"
        )
    per_token = np.zeros(len(mask))
    for t, pair in enumerate(distributions):
        if mask[t] == 0:
            continue
        if pair is None:
            raise MalformedTrajectoryError(f"active token {t} has no distributions")
        per_token[t] = token_kl(pair[0], pair[1], cfg.direction, cfg.topk)
    if cfg.aggregation == "per_token_in_advantage":
        return per_token.tolist()
    total = float(np.dot(mask, per_token))
    if cfg.aggregation == "masked_mean":
        return total / max(1.0, float(mask.sum()))
    return total


def _shape(r_env: float, kl: float, beta: float) -> float:
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if kl < 0:
        raise ValueError("KL values are non-negative")
    return r_env - beta * kl


def shape_reward_opsd(r_env: float, kl: float, beta: float) -> float:
    """OPSD reward: R - beta * KL(student || teacher)."""
    return _shape(r_env, kl, beta)


def shape_reward_pidistill(r_env: float, kl_teacher_to_student: float, beta: float) -> float:
    """
    pi-Distill reward: R - beta * KL(teacher || stop-grad student).

    The result may be negative; group normalisation is shift-invariant.
    """
    return _shape(r_env, kl_teacher_to_student, beta)


def expand_batch(trajectory: Trajectory, mode: DistillMode) -> Tuple[Trajectory, Trajectory]:
    """
    Duplicate a hint-sampled trajectory into student and teacher copies.

    The student copy keeps the hint-free context, so its ratio is
    hint-free-current over hinted-old. The teacher copy reads the hinted
    context and hinted reference, so its ratio is hinted-current over
    hinted-old. Both copies keep the trajectory's reward, shaped reward and
    advantage.

    Args:
        trajectory: Trajectory sampled from the hinted branch
        mode: Distillation mode carrying alpha

    Returns:
        (student copy with weight 2(1 - alpha), teacher copy with weight 2 alpha)

    Raises:
        MalformedTrajectoryError: If hinted log-probabilities were not recorded
    """
    if not trajectory.hint_visible:
        raise MalformedTrajectoryError("batch expansion needs a hint-sampled trajectory")
    teacher_tokens = []
    for t, token in enumerate(trajectory.tokens):
        if not token.role_flag:
            teacher_tokens.append(token)
            continue
        if token.logp_teacher is None or token.alt_context is None:
            raise MalformedTrajectoryError(f"token {t} has no hinted log-probability")
        teacher_tokens.append(token.copy(update={
            "context": token.alt_context,
            "alt_context": token.context,
            "logp_current": token.logp_teacher,
            "logp_teacher": token.logp_current,
            "logp_ref": (
                token.logp_ref if token.logp_ref_teacher is None else token.logp_ref_teacher
            ),
            "logp_ref_teacher": token.logp_ref,
        }))
    student = trajectory.copy(update={"copy_weight": 2.0 * (1.0 - mode.alpha)})
    teacher = trajectory.copy(update={"tokens": teacher_tokens, "copy_weight": 2.0 * mode.alpha})
    return student, teacher


def expand_group(group: RolloutGroup, mode: DistillMode) -> RolloutGroup:
    """
    Batch-expand every member of a group, keeping its advantage.

    Student copies come first, then teacher copies, each aligned with the
    original rewards and advantages.
    """
    students, teachers = [], []
    for traj in group.trajectories:
        student, teacher = expand_batch(traj, mode)
        students.append(student)
        teachers.append(teacher)
    return RolloutGroup(
        prompt_id=group.prompt_id,
        trajectories=students + teachers,
        rewards=list(group.rewards) * 2,
        advantages=list(group.advantages) * 2,
        k=group.k,
        expanded=True,
    )


def shaped_group(
    prompt_id: str,
    trajectories: List[Trajectory],
    params: PolicyParams,
    cfg: KlConfig,
    mode: DistillMode,
    eps: float = GRPO_DEFAULTS["degeneracy_eps"],
) -> RolloutGroup:
    """
    Apply KL shaping to settled trajectories and group them.

    Masked aggregations write ``R - beta * KL`` into ``shaped_reward``; the
    per-token aggregation leaves the reward alone and stores the per-token KL
    for injection into the advantage. pi-Distill groups are then expanded.

    Args:
        prompt_id: Shared prompt
        trajectories: Settled, routed trajectories of one prompt
        params: Parameter snapshot used for teacher scoring
        cfg: KL settings
        mode: Distillation mode
        eps: Degeneracy threshold of the advantage normalisation
    """
    shaper = shape_reward_pidistill if mode.mode == "pi_distill" else shape_reward_opsd
    shaped = []
    for traj in trajectories:
        kl = masked_kl(traj, cfg, branch_distributions(traj, params))
        if cfg.aggregation == "per_token_in_advantage":
            shaped.append(traj.copy(update={"token_kl": kl}))
        else:
            shaped.append(traj.copy(update={"shaped_reward": shaper(traj.reward, kl, cfg.beta)}))
    group = build_group(prompt_id, shaped, eps)
    if mode.mode == "pi_distill":
        return expand_group(group, mode)
    return group
