"""Test fixtures for grpo-reshape."""
from typing import List, Optional, Sequence, Tuple

import pytest

from grpo_reshape.core.tasks import generate_tasks
from grpo_reshape.models.governance import ExitReason, RolloutLimits
from grpo_reshape.models.run import RunConfig
from grpo_reshape.models.trajectory import ActionKind, StepRecord, TokenRecord, Trajectory


def build_trajectory(
    steps: Sequence[Tuple[int, int]],
    scores: Optional[Sequence[Optional[float]]] = None,
    prompt_id: str = "p0",
    reward: float = 0.0,
    compile_ok: Optional[bool] = True,
    exit_reason: ExitReason = ExitReason.FINISH_CALLED,
    contexts: Optional[List[str]] = None,
    token_ids: Optional[List[int]] = None,
    **fields,
) -> Trajectory:
    """
    Build a well-formed trajectory from (assistant tokens, echo tokens) per step.

    Assistant tokens read their context from ``contexts`` in order (cycled),
    defaulting to a single ``kind|x`` row.
    """
    contexts = contexts or ["kind|x"]
    tokens: List[TokenRecord] = []
    records: List[StepRecord] = []
    active = 0
    for i, (n_assistant, n_echo) in enumerate(steps):
        a0 = len(tokens)
        for _ in range(n_assistant):
            token_id = token_ids[active] if token_ids else 0
            tokens.append(TokenRecord(
                token_id=token_id,
                role_flag=1,
                step_index=i,
                context=contexts[active % len(contexts)],
            ))
            active += 1
        a1 = len(tokens)
        for _ in range(n_echo):
            tokens.append(TokenRecord(token_id=0, role_flag=0, step_index=i))
        records.append(StepRecord(
            action_kind=ActionKind.EDIT,
            assistant_span=(a0, a1),
            echo_span=(a1, len(tokens)),
            n_i=n_assistant,
            s_i=scores[i] if scores is not None else None,
        ))
    return Trajectory(
        prompt_id=prompt_id,
        steps=records,
        tokens=tokens,
        reward=reward,
        compile_ok=compile_ok,
        exit_reason=exit_reason,
        **fields,
    )


@pytest.fixture
def make_trajectory():
    """Factory for hand-built trajectories."""
    return build_trajectory


@pytest.fixture
def limits():
    """Default rollout limits."""
    return RolloutLimits()


@pytest.fixture(scope="session")
def toy_tasks():
    """A small verified task split."""
    return generate_tasks(6, seed=3)


@pytest.fixture
def small_config():
    """A run configuration small enough for unit tests."""
    return RunConfig.from_flat({
        "train.steps": 4,
        "train.eval_interval": 2,
        "train.prompts_per_update": 2,
        "train.dump_interval": 2,
        "train.log_interval": 2,
        "grpo.k": 2,
        "data.num_train": 6,
        "data.num_eval": 4,
        "limits.max_steps": 12,
    })
