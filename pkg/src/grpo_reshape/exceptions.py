"""
Exception hierarchy for grpo-reshape.

Every error raised on purpose by the package derives from ``ReshapeError`` and
from the closest builtin, so callers may catch either.
"""
from typing import Optional


class ReshapeError(Exception):
    """Root of all package errors."""


class MalformedTrajectoryError(ReshapeError, ValueError):
    """Step spans, role flags or override masks disagree."""


class DegenerateGroupError(ReshapeError, ValueError):
    """A rollout group too small to normalise (K < 2)."""


class NoActiveTokensError(ReshapeError, ValueError):
    """A weighted mean was requested over zero active tokens."""


class UnknownPoolError(ReshapeError, KeyError):
    """A work item names a resource pool the scheduler does not know."""


class EnvironmentClosedError(ReshapeError, RuntimeError):
    """An action was sent to an environment after ``finish``."""


class DistributionError(ReshapeError, ValueError):
    """A categorical distribution is not normalised or shapes differ."""


class UndefinedStatisticError(ReshapeError, ValueError):
    """A statistic is undefined for the given counts."""


class ConfigError(ReshapeError, ValueError):
    """The run configuration is inconsistent."""


class JudgeUnavailableError(ReshapeError, RuntimeError):
    """Transient semantic-judge failure; retried by the judge wrapper."""


class ReplayMismatchError(ReshapeError, AssertionError):
    """
    Replayed values differ from the values stored at training time.

    Attributes:
        trajectory_index: Position of the offending trajectory in the dump
        token_index: Offending token, when the mismatch is per token
    """

    def __init__(
        self,
        message: str,
        trajectory_index: Optional[int] = None,
        token_index: Optional[int] = None,
    ):
        super().__init__(message)
        self.trajectory_index = trajectory_index
        self.token_index = token_index
