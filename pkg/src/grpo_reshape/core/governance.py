"""
Rollout governance: exit classification, routing and degeneration detectors.
"""
import logging
from typing import Hashable, Iterable, List, Literal, Optional, Sequence

from .trajectory import last_assistant_step
from ..config import DETECTOR_LIMITS
from ..models.governance import ExitReason, Handling, RolloutEvent, RolloutLimits
from ..models.trajectory import Trajectory

logger = logging.getLogger(__name__)

ROUTES = {
    ExitReason.CONTEXT_LIMIT: Handling.MASK_ALL,
    ExitReason.ABORT: Handling.MASK_ALL,
    ExitReason.MAX_TOKENS: Handling.MASK_ALL,
    ExitReason.CONSECUTIVE_COMPILE_TIMEOUTS: Handling.MASK_ALL,
    ExitReason.ENVIRONMENT_SETUP_FAILED: Handling.MASK_ALL,
    ExitReason.CATASTROPHIC_REPETITION: Handling.KEEP_LAST_STEP,
    ExitReason.EXCESSIVE_TOOL_CALLS: Handling.KEEP_LAST_STEP,
    ExitReason.FINISH_CALLED: Handling.NORMAL,
    ExitReason.MAX_STEPS: Handling.NORMAL,
    ExitReason.NO_TOOL_CALL_STOP: Handling.NORMAL,
}


def _is_primitive(unit: Sequence[Hashable]) -> bool:
    """Whether a unit is not itself a repetition of a shorter unit."""
    n = len(unit)
    for d in range(1, n // 2 + 1):
        if n % d == 0 and all(unit[i] == unit[i % d] for i in range(n)):
            return False
    return True


def detect_repetition(
    tokens: Sequence[Hashable],
    ngram_min: int = DETECTOR_LIMITS["ngram_min"],
    ngram_max: int = DETECTOR_LIMITS["ngram_max"],
    max_repeats: int = DETECTOR_LIMITS["max_repeats"],
) -> bool:
    """
    Detect catastrophic repetition in a token stream.

    Fires when a primitive unit whose length lies in [ngram_min, ngram_max]
    repeats back to back more than ``max_repeats`` times. Units that are
    themselves repetitions of a shorter unit are attributed to that shorter
    unit, so a 10-token loop never fires the 15-50 window.
    """
    tokens = list(tokens)
    total = len(tokens)
    for n in range(ngram_min, ngram_max + 1):
        needed = max_repeats * n
        if total < needed + n:
            break
        run = 0
        checked = False
        for i in range(total - n):
            if tokens[i] == tokens[i + n]:
                run += 1
                if run >= needed and not checked:
                    # every rotation of a non-primitive unit is non-primitive too
                    checked = True
                    start = i - run + 1
                    if _is_primitive(tokens[start:start + n]):
                        return True
            else:
                run = 0
                checked = False
    return False


def detect_excessive_tool_calls(
    tool_calls: int,
    max_tool_calls: int = DETECTOR_LIMITS["max_tool_calls"],
) -> bool:
    """Whether one assistant turn parsed more tool calls than allowed."""
    return tool_calls > max_tool_calls


def compile_timeout_guard(
    consecutive_timeouts: int,
    threshold: int = DETECTOR_LIMITS["compile_timeout_threshold"],
) -> Literal["continue", "abort_next_step"]:
    """Abort a rollout once consecutive compile timeouts reach the threshold."""
    return "abort_next_step" if consecutive_timeouts >= threshold else "continue"


class ExitMonitor:
    """
    Incremental exit classifier over an ordered event log.

    Args:
        limits: Budgets and detector thresholds
    """

    def __init__(self, limits: RolloutLimits):
        self.limits = limits
        self.turns = 0
        self.consecutive_timeouts = 0
        self.stream: List[int] = []
        self.reason: Optional[ExitReason] = None

    def observe(self, event: RolloutEvent) -> Optional[ExitReason]:
        """
        Feed one event; return the exit reason once a rule fires.

        The first rule to fire wins and later events are ignored.
        """
        if self.reason is not None:
            return self.reason
        self.reason = self._check(event)
        return self.reason

    def _check(self, event: RolloutEvent) -> Optional[ExitReason]:
        limits = self.limits
        if event.kind == "setup_failed":
            return ExitReason.ENVIRONMENT_SETUP_FAILED
        if event.kind == "abort":
            return ExitReason.ABORT
        if event.kind == "compile_result":
            if event.timed_out:
                self.consecutive_timeouts += 1
            else:
                self.consecutive_timeouts = 0
            guard = compile_timeout_guard(self.consecutive_timeouts, limits.compile_timeout_threshold)
            if guard == "abort_next_step":
                return ExitReason.CONSECUTIVE_COMPILE_TIMEOUTS
            return None

        self.turns += 1
        self.stream.extend(event.tokens)
        if event.output_tokens >= limits.max_step_tokens:
            return ExitReason.MAX_TOKENS
        if event.context_tokens >= limits.max_context_tokens:
            return ExitReason.CONTEXT_LIMIT
        if detect_excessive_tool_calls(event.tool_calls, limits.max_tool_calls):
            return ExitReason.EXCESSIVE_TOOL_CALLS
        if len(self.stream) > limits.max_repeats * limits.ngram_min and detect_repetition(
            self.stream, limits.ngram_min, limits.ngram_max, limits.max_repeats
        ):
            return ExitReason.CATASTROPHIC_REPETITION
        if event.finish:
            return ExitReason.FINISH_CALLED
        if event.tool_calls == 0:
            return ExitReason.NO_TOOL_CALL_STOP
        if self.turns >= limits.max_steps:
            return ExitReason.MAX_STEPS
        return None


def classify_exit(events: Iterable[RolloutEvent], limits: RolloutLimits) -> ExitReason:
    """
    Classify a finished rollout from its ordered event log.

    Args:
        events: Ordered event log
        limits: Budgets and detector thresholds

    Returns:
        The first triggered reason; ``no_tool_call_stop`` when nothing fired
    """
    monitor = ExitMonitor(limits)
    for event in events:
        reason = monitor.observe(event)
        if reason is not None:
            return reason
    return ExitReason.NO_TOOL_CALL_STOP


def route(reason: ExitReason) -> Handling:
    """Map an exit reason to its masking strategy."""
    return ROUTES[ExitReason(reason)]


def apply_routing(trajectory: Trajectory, handling: Handling) -> Trajectory:
    """
    Attach the routing override to a trajectory.

    MaskAll zeroes every token and forces R = 0; KeepLastStep keeps only the
    final assistant turn's tokens and forces R = 0; Normal leaves the
    trajectory untouched. The trajectory stays in its group either way.

    Args:
        trajectory: Trajectory with its exit reason classified
        handling: Routing decision

    Returns:
        A routed copy
    """
    handling = Handling(handling)
    if handling == Handling.NORMAL:
        return trajectory
    logger.debug("routing %s exit of %s to %s", trajectory.exit_reason.value,
                 trajectory.prompt_id, handling.value)
    override = [0] * len(trajectory.tokens)
    if handling == Handling.KEEP_LAST_STEP:
        last = last_assistant_step(trajectory)
        if last >= 0:
            a0, a1 = trajectory.steps[last].assistant_span
            for t in range(a0, a1):
                override[t] = trajectory.tokens[t].role_flag
    return trajectory.copy(
        update={
            "loss_mask_override": override,
            "reward": 0.0,
            "shaped_reward": None,
            "compile_ok": None,
            "verdict": None,
        }
    )
