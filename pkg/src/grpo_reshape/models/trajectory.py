"""
Models for multi-turn trajectories, their steps and tokens.
"""
from enum import Enum
from typing import List, Optional, Tuple

from pydantic import Field, root_validator, validator

from .base import ReshapeModel
from .governance import ExitReason
from .rewards import SemanticVerdict


class ActionKind(str, Enum):
    """Tool kinds an assistant turn may issue."""
    VIEW = "view"
    EDIT = "edit"
    COMPILE = "compile"
    FINISH = "finish"
    OTHER = "other"


class TokenRecord(ReshapeModel):
    """
    One token of a trajectory.

    Attributes:
        token_id: Index into the categorical row that produced the token
            (echo tokens index the echo vocabulary)
        role_flag: 1 for assistant-generated tokens, 0 for environment echo
        step_index: Owning step
        logp_current: Log-probability under the current policy (nats)
        logp_old: Log-probability under the rollout-time policy (nats)
        logp_ref: Log-probability under the frozen reference policy (nats)
        logp_teacher: Log-probability under the hint-conditioned branch (nats)
        logp_ref_teacher: Reference log-probability of the hint-conditioned branch
        context: Policy row the loss reads ``logp_current`` from
        alt_context: Row of the opposite branch (hinted for students, hint-free
            for teachers)
    """
    token_id: int
    role_flag: int
    step_index: int
    logp_current: float = 0.0
    logp_old: float = 0.0
    logp_ref: float = 0.0
    logp_teacher: Optional[float] = None
    logp_ref_teacher: Optional[float] = None
    context: Optional[str] = None
    alt_context: Optional[str] = None

    @validator("role_flag")
    def validate_role_flag(cls, v):
        """Role flags are binary."""
        if v not in (0, 1):
            raise ValueError("role_flag must be 0 or 1")
        return v


class StepRecord(ReshapeModel):
    """
    One tool-interaction turn.

    Attributes:
        action_kind: Tool issued by the assistant
        assistant_span: Half-open token range of the assistant turn
        echo_span: Half-open token range of the environment echo
        n_i: Assistant tokens in the step
        s_i: Process score in [0, 1], when scored
        loc: Location argument of view/edit
        symbol: Symbol argument of edit
        tool_calls: Parsed tool calls in the turn
    """
    action_kind: ActionKind
    assistant_span: Tuple[int, int]
    echo_span: Tuple[int, int]
    n_i: int
    s_i: Optional[float] = None
    loc: Optional[int] = None
    symbol: Optional[str] = None
    tool_calls: int = 1

    @validator("s_i")
    def validate_score(cls, v):
        """Process scores live in [0, 1]."""
        if v is not None and not 0.0 <= v <= 1.0:
            raise ValueError("s_i must lie in [0, 1]")
        return v

    @validator("n_i")
    def validate_count(cls, v):
        """Token counts are non-negative."""
        if v < 0:
            raise ValueError("n_i must be >= 0")
        return v


class Trajectory(ReshapeModel):
    """
    A settled multi-turn rollout, the unit of group comparison.

    Attributes:
        prompt_id: Task the rollout answered
        steps: Ordered steps
        tokens: Ordered tokens
        exit_reason: Classified exit
        reward: Settled environment reward R in [0, 1]
        shaped_reward: Reward after distillation shaping, when shaped
        loss_mask_override: Per-token routing mask, applied on top of role flags
        compile_ok: Surface check on the final sequence (None when skipped)
        verdict: Semantic verdict used at settlement
        semantic_ok: Ground-truth semantic predicate (metrics only)
        final_sequence: Working sequence at exit
        hint_visible: Whether the rollout was sampled by the hinted branch
        copy_weight: Loss weight of this copy after batch expansion
        token_kl: Stop-gradient per-token KL (per-token-in-advantage mode)
        token_weights: Effective token weights stored at training time
        advantage: Group advantage stored at training time
    """
    prompt_id: str
    steps: List[StepRecord] = Field(default_factory=list)
    tokens: List[TokenRecord] = Field(default_factory=list)
    exit_reason: ExitReason = ExitReason.NO_TOOL_CALL_STOP
    reward: float = 0.0
    shaped_reward: Optional[float] = None
    loss_mask_override: Optional[List[int]] = None
    compile_ok: Optional[bool] = None
    verdict: Optional[SemanticVerdict] = None
    semantic_ok: Optional[bool] = None
    final_sequence: List[str] = Field(default_factory=list)
    hint_visible: bool = False
    copy_weight: float = 1.0
    token_kl: Optional[List[float]] = None
    token_weights: Optional[List[float]] = None
    advantage: Optional[float] = None

    class Config:
        allow_mutation = False

    @validator("reward")
    def validate_reward(cls, v):
        """Settled environment rewards lie in [0, 1]."""
        if not 0.0 <= v <= 1.0:
            raise ValueError("reward must lie in [0, 1]")
        return v

    @root_validator(skip_on_failure=True)
    def validate_structure(cls, values):
        """Reject trajectories whose steps do not partition the tokens."""
        problems = structure_problems(
            values.get("steps", []),
            values.get("tokens", []),
            values.get("loss_mask_override"),
        )
        if problems:
            raise ValueError("; ".join(problems))
        return values

    @property
    def training_reward(self) -> float:
        """Reward entering group normalisation (shaped when shaping applied)."""
        return self.reward if self.shaped_reward is None else self.shaped_reward


def structure_problems(
    steps: List[StepRecord],
    tokens: List[TokenRecord],
    override: Optional[List[int]] = None,
) -> List[str]:
    """
    List every structural inconsistency of a trajectory.

    Args:
        steps: Ordered steps
        tokens: Ordered tokens
        override: Optional routing mask

    Returns:
        Human-readable problems; empty when the trajectory is well formed
    """
    problems = []
    cursor = 0
    for i, step in enumerate(steps):
        a0, a1 = step.assistant_span
        e0, e1 = step.echo_span
        if a0 != cursor or a1 < a0 or e0 != a1 or e1 < e0:
            problems.append(f"step {i} spans do not continue the partition at token {cursor}")
            break
        for t in range(a0, min(e1, len(tokens))):
            if tokens[t].step_index != i:
                problems.append(f"token {t} claims step {tokens[t].step_index}, span says {i}")
                break
        active = sum(tokens[t].role_flag for t in range(a0, min(a1, len(tokens))))
        if any(tokens[t].role_flag for t in range(e0, min(e1, len(tokens)))):
            problems.append(f"step {i} echo span holds assistant tokens")
        if active != step.n_i:
            problems.append(f"step {i} has n_i={step.n_i} but {active} assistant tokens")
        cursor = e1
    if not problems and cursor != len(tokens):
        problems.append(f"steps cover {cursor} of {len(tokens)} tokens")
    for t in range(1, len(tokens)):
        if tokens[t].step_index < tokens[t - 1].step_index:
            problems.append(f"step_index decreases at token {t}")
            break
    if override is not None:
        if len(override) != len(tokens):
            problems.append(
                f"loss_mask_override has {len(override)} entries for {len(tokens)} tokens"
            )
        elif any(v not in (0, 1) for v in override):
            problems.append("loss_mask_override must be binary")
    return problems
