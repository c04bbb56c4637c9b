"""
Models for rollout governance: exit reasons, routing, limits and pools.
"""
from enum import Enum
from typing import List, Literal, Optional

from pydantic import Field, validator

from .base import ReshapeModel
from ..config import DETECTOR_LIMITS


class ExitReason(str, Enum):
    """Why a trajectory stopped."""
    FINISH_CALLED = "finish_called"
    MAX_STEPS = "max_steps"
    NO_TOOL_CALL_STOP = "no_tool_call_stop"
    CONTEXT_LIMIT = "context_limit"
    ABORT = "abort"
    MAX_TOKENS = "max_tokens"
    CATASTROPHIC_REPETITION = "catastrophic_repetition"
    EXCESSIVE_TOOL_CALLS = "excessive_tool_calls"
    CONSECUTIVE_COMPILE_TIMEOUTS = "consecutive_compile_timeouts"
    ENVIRONMENT_SETUP_FAILED = "environment_setup_failed"


class Handling(str, Enum):
    """How a trajectory enters the loss after its exit is classified."""
    NORMAL = "Normal"
    MASK_ALL = "MaskAll"
    KEEP_LAST_STEP = "KeepLastStep"


class PoolConfig(ReshapeModel):
    """
    Concurrency caps for the three execution-resource classes.

    Attributes:
        inference_cap: Concurrent model-generation requests
        sandbox_cap: Concurrent file/command sandbox operations
        compile_cap: Concurrent compilations
        compile_timeout_threshold: Consecutive compile timeouts that abort a rollout
    """
    inference_cap: int = 8
    sandbox_cap: int = 8
    compile_cap: int = 2
    compile_timeout_threshold: int = DETECTOR_LIMITS["compile_timeout_threshold"]

    @validator("inference_cap", "sandbox_cap", "compile_cap", "compile_timeout_threshold")
    def validate_positive(cls, v):
        """Caps and thresholds must be at least 1."""
        if v < 1:
            raise ValueError("pool caps and thresholds must be >= 1")
        return v

    def caps(self) -> dict:
        """Pool name to cap mapping used by the schedulers."""
        return {
            "inference": self.inference_cap,
            "sandbox": self.sandbox_cap,
            "compile": self.compile_cap,
        }


class RolloutLimits(ReshapeModel):
    """
    Budgets and detector thresholds checked while a rollout runs.

    Attributes:
        max_steps: Assistant turns before normal budget exhaustion
        max_context_tokens: Context budget (assistant plus echo tokens)
        max_step_tokens: Output budget of a single assistant turn
        max_tool_calls: Parsed tool calls allowed in one turn
        ngram_min: Shortest repeated unit considered degenerate
        ngram_max: Longest repeated unit considered degenerate
        max_repeats: Repeats tolerated before repetition fires
        compile_timeout_threshold: Consecutive compile timeouts tolerated
    """
    max_steps: int = DETECTOR_LIMITS["max_steps"]
    max_context_tokens: int = 512
    max_step_tokens: int = 8
    max_tool_calls: int = DETECTOR_LIMITS["max_tool_calls"]
    ngram_min: int = DETECTOR_LIMITS["ngram_min"]
    ngram_max: int = DETECTOR_LIMITS["ngram_max"]
    max_repeats: int = DETECTOR_LIMITS["max_repeats"]
    compile_timeout_threshold: int = DETECTOR_LIMITS["compile_timeout_threshold"]


class RolloutEvent(ReshapeModel):
    """
    One entry of a rollout's ordered event log.

    Attributes:
        kind: ``turn`` for an assistant turn, ``compile_result`` after a compile,
            ``abort`` for an inference interruption, ``setup_failed`` when the
            environment could not be prepared
        step: Index of the assistant turn the event belongs to
        output_tokens: Tokens generated in this turn
        context_tokens: Total context tokens after this turn
        tool_calls: Parsed tool calls in this turn
        tokens: Assistant token ids of this turn
        finish: Whether this turn called the finish tool
        timed_out: Whether the compile timed out
    """
    kind: Literal["turn", "compile_result", "abort", "setup_failed"]
    step: int = 0
    output_tokens: int = 0
    context_tokens: int = 0
    tool_calls: int = 0
    tokens: List[int] = Field(default_factory=list)
    finish: bool = False
    timed_out: bool = False


class WorkItem(ReshapeModel):
    """
    A resource-typed unit of rollout work for the scheduler.

    Attributes:
        task_id: Unique identifier
        pool: ``inference``, ``sandbox`` or ``compile``
        duration: Abstract time units the item holds its slot
        arrival: Earliest start time
        after: Optional task that must finish (and release its slot) first
    """
    task_id: str
    pool: str
    duration: float
    arrival: float = 0.0
    after: Optional[str] = None

    @validator("duration")
    def validate_duration(cls, v):
        """Durations must be positive."""
        if v <= 0:
            raise ValueError("duration must be positive")
        return v


class TraceEvent(ReshapeModel):
    """A start or finish in a simulated schedule, with pool occupancy after it."""
    time: float
    event: Literal["start", "finish"]
    task_id: str
    pool: str
    in_flight: int
