"""
Trajectory-level reward settlement and the synthetic semantic judge.
"""
import logging
import threading
from typing import Optional, Sequence, Union

import numpy as np
from tenacity import (
    Retrying,
    before_sleep_log,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from ..config import JUDGE_RETRY
from ..exceptions import JudgeUnavailableError
from ..models.rewards import RewardScheme, SemanticVerdict

logger = logging.getLogger(__name__)

# Each tier is worth half of the full reward
R_COMPILE = 0.5
R_SEMANTIC = 0.5


def settle_layered(compile_ok: bool, verdict: SemanticVerdict) -> float:
    """
    Layered reward in {0, 0.5, 1}.

    The verdict is only read once compilation succeeded; skipped checks and
    judge failures keep the compile tier.
    """
    if not compile_ok:
        return 0.0
    if verdict == SemanticVerdict.CONSISTENT:
        return R_COMPILE + R_SEMANTIC
    return R_COMPILE


def settle_compile_only(compile_ok: bool, verdict: Optional[SemanticVerdict] = None) -> float:
    """Reward decided by the surface check alone; the verdict is ignored."""
    return 1.0 if compile_ok else 0.0


def settle_binary(compile_ok: bool, verdict: SemanticVerdict) -> float:
    """Layered reward with the compile-only tier collapsed into failure."""
    if compile_ok and verdict == SemanticVerdict.CONSISTENT:
        return 1.0
    return 0.0


_SETTLERS = {
    RewardScheme.LAYERED: settle_layered,
    RewardScheme.COMPILE_ONLY: settle_compile_only,
    RewardScheme.BINARY: settle_binary,
}


def settle(scheme: RewardScheme, compile_ok: bool, verdict: SemanticVerdict) -> float:
    """
    Settle a reward under the configured scheme.

    Args:
        scheme: Reward scheme
        compile_ok: Surface check on the final sequence
        verdict: Semantic verdict (ignored on compile failure)

    Returns:
        Scalar reward
    """
    return _SETTLERS[RewardScheme(scheme)](compile_ok, verdict)


def needs_semantics(scheme: RewardScheme) -> bool:
    """Whether the scheme reads the semantic verdict at all."""
    return RewardScheme(scheme) != RewardScheme.COMPILE_ONLY


def noisy_judge(
    true_semantic: bool,
    sensitivity: float,
    specificity: float,
    rng: np.random.Generator,
) -> SemanticVerdict:
    """
    Draw a verdict from a judge with the given operating point.

    Args:
        true_semantic: Ground-truth semantic predicate
        sensitivity: P(consistent | truly consistent)
        specificity: P(inconsistent | truly inconsistent)
        rng: Random generator

    Returns:
        ``consistent`` or ``inconsistent``
    """
    if not (0.0 <= sensitivity <= 1.0 and 0.0 <= specificity <= 1.0):
        raise ValueError("sensitivity and specificity must lie in [0, 1]")
    p_consistent = sensitivity if true_semantic else 1.0 - specificity
    if rng.random() < p_consistent:
        return SemanticVerdict.CONSISTENT
    return SemanticVerdict.INCONSISTENT


class SyntheticJudge:
    """
    Thread-safe noisy judge with retry and fault injection.

    Args:
        sensitivity: Judge sensitivity
        specificity: Judge specificity
        seed: Seed of the judge's private random stream
        fault_rate: Probability that one attempt fails transiently
        train_retries: Retries after the first attempt during training
        eval_retries: Retries after the first attempt during evaluation
        backoff_seconds: Multiplier of the exponential backoff between attempts
    """

    def __init__(
        self,
        sensitivity: float = 1.0,
        specificity: float = 1.0,
        seed: Union[int, Sequence[int]] = 0,
        fault_rate: float = 0.0,
        train_retries: int = JUDGE_RETRY["train_retries"],
        eval_retries: int = JUDGE_RETRY["eval_retries"],
        backoff_seconds: float = JUDGE_RETRY["min_seconds"],
    ):
        self.sensitivity = sensitivity
        self.specificity = specificity
        self.fault_rate = fault_rate
        self.train_retries = train_retries
        self.eval_retries = eval_retries
        self.backoff_seconds = backoff_seconds
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()

    def attempt(self, true_semantic: bool) -> SemanticVerdict:
        """
        One judge call.

        Raises:
            JudgeUnavailableError: On an injected transient fault
        """
        with self._lock:
            if self.fault_rate > 0 and self._rng.random() < self.fault_rate:
                raise JudgeUnavailableError("semantic judge unavailable")
            return noisy_judge(true_semantic, self.sensitivity, self.specificity, self._rng)

    def judge(self, true_semantic: bool, evaluation: bool = False) -> SemanticVerdict:
        """
        Judge a compiling repair, retrying transient failures.

        Args:
            true_semantic: Ground-truth semantic predicate
            evaluation: Use the evaluation retry budget

        Returns:
            The verdict, or ``judge_error`` once retries are exhausted
        """
        retries = self.eval_retries if evaluation else self.train_retries
        retrying = Retrying(
            stop=stop_after_attempt(retries + 1),
            wait=wait_exponential(
                multiplier=self.backoff_seconds,
                max=JUDGE_RETRY["max_seconds"],
                exp_base=JUDGE_RETRY["factor"],
            ),
            retry=retry_if_exception_type(JudgeUnavailableError),
            before_sleep=before_sleep_log(logger, logging.WARNING),
            reraise=True,
        )
        try:
            return retrying(self.attempt, true_semantic)
        except JudgeUnavailableError:
            logger.warning("judge failed after %d attempts; settling as judge_error", retries + 1)
            return SemanticVerdict.JUDGE_ERROR
