"""
Run configuration and metrics records.
"""
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Union

from dotenv import dotenv_values
from pydantic import Field, ValidationError, validator

from .base import ReshapeModel
from ..exceptions import ConfigError
from .distill import DistillMode, KlConfig
from .governance import PoolConfig, RolloutLimits
from .grpo import ClipConfig
from .rewards import RewardScheme
from ..config import DETECTOR_LIMITS, GRPO_DEFAULTS, JUDGE_RETRY


class RewardSection(ReshapeModel):
    """Outcome reward settings."""
    scheme: RewardScheme = RewardScheme.LAYERED


class ProcessScoresSection(ReshapeModel):
    """
    Step-level process score settings.

    Attributes:
        enabled: False forces the neutral branch everywhere
        drop_prob: Probability that the scorer fails to score a step
    """
    enabled: bool = True
    drop_prob: float = 0.0


class ScorerSection(ReshapeModel):
    """Rubric constants of the synthetic step scorer."""
    compile_base: float = 0.7
    redundant_view_cap: float = 0.2
    first_view: float = 0.5
    edit_reach: float = 1.0
    edit_closer: float = 0.8
    edit_neutral: float = 0.4
    edit_worse: float = 0.1
    finish_ok: float = 0.9
    finish_fail: float = 0.3
    other: float = 0.0

    @validator("*")
    def validate_unit(cls, v):
        """Every rubric score is a valid process score."""
        if not 0.0 <= v <= 1.0:
            raise ValueError("rubric scores must lie in [0, 1]")
        return v


class DistillSection(ReshapeModel):
    """
    Distillation baseline settings.

    Attributes:
        mode: ``off``, ``pi_distill`` or ``opsd``
        beta: KL penalty weight
        alpha: Teacher-copy weight for pi_distill
        aggregation: How token KL is aggregated
        direction: KL direction; defaults from the mode
        topk: Optional top-k truncation
    """
    mode: Literal["off", "pi_distill", "opsd"] = "off"
    beta: float = 0.02
    alpha: float = 0.5
    aggregation: Literal["masked_sum", "masked_mean", "per_token_in_advantage"] = "masked_sum"
    direction: Optional[Literal["teacher_to_student", "student_to_teacher"]] = None
    topk: Optional[int] = None

    def kl_config(self) -> KlConfig:
        """Build the KL settings, deriving the direction from the mode."""
        direction = self.direction or (
            "teacher_to_student" if self.mode == "pi_distill" else "student_to_teacher"
        )
        return KlConfig(
            direction=direction,
            aggregation=self.aggregation,
            beta=self.beta,
            topk=self.topk,
        )

    def distill_mode(self) -> Optional[DistillMode]:
        """Mode model, or None when distillation is off."""
        if self.mode == "off":
            return None
        return DistillMode(mode=self.mode, alpha=self.alpha)


class GrpoSection(ReshapeModel):
    """GRPO group size, clipping and regularisers."""
    k: int = GRPO_DEFAULTS["k"]
    eps_lo: float = GRPO_DEFAULTS["eps_lo"]
    eps_hi: float = GRPO_DEFAULTS["eps_hi"]
    kl_coef: float = GRPO_DEFAULTS["kl_coef"]
    entropy_coef: float = GRPO_DEFAULTS["entropy_coef"]
    degeneracy_eps: float = GRPO_DEFAULTS["degeneracy_eps"]

    @validator("k")
    def validate_k(cls, v):
        """Groups need two members to normalise."""
        if v < 2:
            raise ValueError("grpo.k must be >= 2")
        return v

    def clip_config(self) -> ClipConfig:
        """Build the loss coefficients."""
        return ClipConfig(
            eps_lo=self.eps_lo,
            eps_hi=self.eps_hi,
            kl_coef=self.kl_coef,
            entropy_coef=self.entropy_coef,
        )


class LimitsSection(ReshapeModel):
    """Rollout budgets."""
    max_steps: int = DETECTOR_LIMITS["max_steps"]
    max_context_tokens: int = 512
    max_step_tokens: int = 8


class EnvSection(ReshapeModel):
    """
    Toy environment settings.

    Attributes:
        length: Sequence length (the edit space is 6**length)
        corruptions: Delimiters corrupted in each task
        compile_timeout_prob: Probability that a compile call times out
    """
    length: int = 5
    corruptions: int = 1
    compile_timeout_prob: float = 0.0

    @validator("length")
    def validate_length(cls, v):
        """Keep the exhaustive check within 10**4 sequences."""
        if not 2 <= v <= 5:
            raise ValueError("env.length must lie in [2, 5]")
        return v


class JudgeSection(ReshapeModel):
    """Synthetic semantic judge settings."""
    sensitivity: float = 1.0
    specificity: float = 1.0
    fault_rate: float = 0.0
    train_retries: int = JUDGE_RETRY["train_retries"]
    eval_retries: int = JUDGE_RETRY["eval_retries"]
    backoff_seconds: float = JUDGE_RETRY["min_seconds"]


class TrainSection(ReshapeModel):
    """Training loop settings."""
    lr: float = 0.05
    steps: int = 300
    eval_interval: int = 50
    seed: int = 0
    prompts_per_update: int = 8
    log_interval: int = 25
    dump_interval: int = 100
    temperature: float = GRPO_DEFAULTS["temperature"]


class EvalSection(ReshapeModel):
    """Evaluation decoding settings (hints are never visible)."""
    greedy: bool = False
    temperature: float = 1.0


class DataSection(ReshapeModel):
    """
    Task splits.

    Attributes:
        train_tasks: Train task file; generated in memory when unset
        eval_tasks: Fixed eval split file; generated in memory when unset
        num_train: Generated train tasks
        num_eval: Generated eval tasks
        task_seed: Generator seed for in-memory splits
    """
    train_tasks: Optional[str] = None
    eval_tasks: Optional[str] = None
    num_train: int = 64
    num_eval: int = 32
    task_seed: int = 0


class RunConfig(ReshapeModel):
    """Complete configuration of one experiment arm."""
    reward: RewardSection = Field(default_factory=RewardSection)
    process_scores: ProcessScoresSection = Field(default_factory=ProcessScoresSection)
    scorer: ScorerSection = Field(default_factory=ScorerSection)
    distill: DistillSection = Field(default_factory=DistillSection)
    grpo: GrpoSection = Field(default_factory=GrpoSection)
    pools: PoolConfig = Field(default_factory=PoolConfig)
    limits: LimitsSection = Field(default_factory=LimitsSection)
    env: EnvSection = Field(default_factory=EnvSection)
    judge: JudgeSection = Field(default_factory=JudgeSection)
    train: TrainSection = Field(default_factory=TrainSection)
    eval: EvalSection = Field(default_factory=EvalSection)
    data: DataSection = Field(default_factory=DataSection)

    def rollout_limits(self) -> RolloutLimits:
        """Budgets and detector thresholds for rollouts."""
        return RolloutLimits(
            max_steps=self.limits.max_steps,
            max_context_tokens=self.limits.max_context_tokens,
            max_step_tokens=self.limits.max_step_tokens,
            compile_timeout_threshold=self.pools.compile_timeout_threshold,
        )

    def to_flat(self) -> Dict[str, Any]:
        """Dotted-key view of the configuration."""
        flat = {}
        for section, values in self.to_record().items():
            for key, value in values.items():
                flat[f"{section}.{key}"] = value
        return flat

    @classmethod
    def from_flat(cls, flat: Mapping[str, Any]) -> "RunConfig":
        """
        Build a configuration from dotted keys.

        Args:
            flat: Mapping such as ``{"grpo.k": "8"}``; strings are coerced

        Returns:
            Validated RunConfig
        """
        nested: Dict[str, Dict[str, Any]] = {}
        for key, value in flat.items():
            if "." not in key:
                raise ConfigError(f"config key {key!r} must be dotted (section.name)")
            section, name = key.split(".", 1)
            if isinstance(value, str) and value.strip().lower() in ("", "none", "null"):
                value = None
            nested.setdefault(section, {})[name] = value
        try:
            return cls.parse_obj(nested)
        except ValidationError as e:
            raise ConfigError(f"invalid run configuration: {e}") from e

    @classmethod
    def from_file(
        cls,
        path: Union[str, Path],
        overrides: Optional[Mapping[str, Any]] = None,
        base: Optional[Mapping[str, Any]] = None,
    ) -> "RunConfig":
        """
        Load a line-oriented ``dotted.key = value`` file.

        Args:
            path: Config file
            overrides: Dotted keys applied after the file
            base: Dotted keys applied before the file (arm presets)

        Returns:
            Validated RunConfig

        Raises:
            ConfigError: If the file is missing or a value is invalid
        """
        if not Path(path).is_file():
            raise ConfigError(f"config file {path} does not exist")
        flat: Dict[str, Any] = dict(base or {})
        flat.update({k: v for k, v in dotenv_values(path).items()})
        flat.update(overrides or {})
        return cls.from_flat(flat)


class EvalSummary(ReshapeModel):
    """
    Aggregate of one evaluation pass.

    Attributes:
        n: Evaluated trajectories
        surface_rate: Fraction passing the surface check
        semantic_rate: Fraction passing both checks
        judged_semantic_rate: Fraction that compiles and is judged consistent
        mean_steps: Mean assistant turns
        exit_composition: Fraction of each exit reason
    """
    n: int
    surface_rate: float
    semantic_rate: float
    judged_semantic_rate: float
    mean_steps: float
    exit_composition: Dict[str, float]


class MetricsRecord(ReshapeModel):
    """
    One line of the metrics log. Every record carries every key.

    Attributes:
        phase: ``train`` or ``eval``
        update: Update index the record belongs to
        mean_reward: Mean settled environment reward
        tier_mass: Fraction of rewards at 0, 0.5 and 1
        surface_rate: Surface-check pass rate
        semantic_rate: Surface-and-semantic pass rate
        judged_semantic_rate: Judge-consistent rate (eval only)
        mean_steps: Mean assistant turns
        exit_composition: Fraction of each exit reason
        grad_norm: Gradient norm (train only)
        loss: Loss value (train only)
        entropy: Mean policy entropy over active tokens
        finish_without_compile: Finishes not preceded by a compile call
        makespan: Simulated rollout makespan (train only)
        peak_compile: Peak simulated compile occupancy (train only)
    """
    phase: Literal["train", "eval"]
    update: int
    mean_reward: float
    tier_mass: Dict[str, float]
    surface_rate: float
    semantic_rate: float
    judged_semantic_rate: Optional[float]
    mean_steps: float
    exit_composition: Dict[str, float]
    grad_norm: Optional[float]
    loss: Optional[float]
    entropy: float
    finish_without_compile: float
    makespan: Optional[float]
    peak_compile: Optional[int]
