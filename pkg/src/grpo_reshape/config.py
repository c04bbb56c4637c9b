"""
Configuration settings and published defaults for grpo-reshape.
"""
from typing import Any, Dict, Optional

from pydantic import BaseSettings


class Settings(BaseSettings):
    """
    Process-level settings, read from the environment.

    Attributes:
        log_level: Root logging level used by the CLI
        out_dir: Default output directory for runs
        config_file: Optional default run-config file
    """
    log_level: str = "INFO"
    out_dir: str = "runs"
    config_file: Optional[str] = None

    class Config:
        env_prefix = "GRPO_RESHAPE_"
        case_sensitive = False


# Default settings instance
settings = Settings()

# GRPO training and sampling defaults
GRPO_DEFAULTS = {
    "k": 8,
    "eps_lo": 0.2,
    "eps_hi": 0.28,
    "kl_coef": 0.01,
    "entropy_coef": 0.0,
    "degeneracy_eps": 1e-8,
    "temperature": 1.0,
}

# Rollout exit detectors
DETECTOR_LIMITS = {
    "ngram_min": 15,
    "ngram_max": 50,
    "max_repeats": 30,
    "max_tool_calls": 5,
    "compile_timeout_threshold": 2,
    "max_steps": 50,
}

# Semantic judge retries (retries after the first attempt)
JUDGE_RETRY = {
    "train_retries": 2,
    "eval_retries": 5,
    "min_seconds": 0.0,
    "max_seconds": 8.0,
    "factor": 2,
}

# Audited judge operating point
AUDIT_JUDGE = {
    "sensitivity": 0.917,
    "specificity": 0.885,
}

# Scale presets, applied beneath an arm preset. The desk step is sized for
# the 1 / (trajectories * active tokens) factor on every loss term; "default"
# keeps the RunConfig defaults (K=8, lr=0.05).
SCALE_PRESETS: Dict[str, Dict[str, Any]] = {
    "desk": {
        "grpo.k": 4,
        "train.lr": 10.0,
    },
    "default": {},
}

DESK_PRESET = SCALE_PRESETS["desk"]

# The six experiment arms, as dotted-key overrides
ARM_PRESETS: Dict[str, Dict[str, Any]] = {
    "compile_only": {
        "reward.scheme": "compile_only",
        "process_scores.enabled": False,
        "distill.mode": "off",
    },
    "binary": {
        "reward.scheme": "binary",
        "process_scores.enabled": False,
        "distill.mode": "off",
    },
    "early": {
        "reward.scheme": "layered",
        "process_scores.enabled": False,
        "distill.mode": "off",
    },
    "full": {
        "reward.scheme": "layered",
        "process_scores.enabled": True,
        "distill.mode": "off",
    },
    "opsd": {
        "reward.scheme": "layered",
        "process_scores.enabled": False,
        "distill.mode": "opsd",
        "distill.beta": 0.02,
        "distill.direction": "student_to_teacher",
    },
    "pi_distill": {
        "reward.scheme": "layered",
        "process_scores.enabled": False,
        "distill.mode": "pi_distill",
        "distill.beta": 0.01,
        "distill.alpha": 0.5,
        "distill.direction": "teacher_to_student",
    },
}
