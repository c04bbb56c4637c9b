"""
Experiment runner wiring rollouts, settlement, shaping, credit and the
GRPO update into one deterministic training loop.
"""
import csv
import logging
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from .core.credit import trajectory_token_weights
from .core.distill import shaped_group
from .core.env import sample_trajectory, slot_sizes, synthetic_step_scorer
from .core.governance import apply_routing, route
from .core.grpo import LossResult, build_group, group_advantages, grpo_loss
from .core.policy import PolicyParams, grad_norm
from .core.rewards import SyntheticJudge, needs_semantics, settle
from .core.scheduler import makespan, occupancy_peaks, rollout_work_items, schedule
from .core.tasks import generate_tasks, read_tasks, semantic_check, surface_check, task_key
from .exceptions import ConfigError, ReplayMismatchError
from .models.governance import ExitReason, Handling
from .models.grpo import RolloutGroup
from .models.rewards import SemanticVerdict
from .models.run import EvalSummary, MetricsRecord, RunConfig
from .models.tasks import ToyTask
from .models.trajectory import ActionKind, Trajectory
from .utils.io import append_jsonl, iter_jsonl

logger = logging.getLogger(__name__)

# Independent random streams derived from train.seed
PROMPT_STREAM = 1
JUDGE_STREAM = 2
EVAL_STREAM = 3
EVAL_JUDGE_STREAM = 4
SCORER_STREAM = 5

TIERS = {"0": 0.0, "0.5": 0.5, "1": 1.0}

METRICS_FILE = "metrics.jsonl"
DUMP_FILE = "trajectories.jsonl"
PARAMS_FILE = "params.json"

REPLAY_TOL = 1e-9


class ReplayResult(NamedTuple):
    """Stored and recomputed loss of one dumped update."""
    update: int
    stored_loss: float
    replayed_loss: float
    trajectories: int


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if len(values) else 0.0


def finished_without_compile(trajectory: Trajectory) -> bool:
    """Whether the rollout called finish without any earlier compile."""
    if trajectory.exit_reason != ExitReason.FINISH_CALLED:
        return False
    return not any(step.action_kind == ActionKind.COMPILE for step in trajectory.steps[:-1])


def rollout_summary(trajectories: Sequence[Trajectory], tasks: Dict[str, ToyTask]) -> Dict:
    """
    Reward tiers, check rates, lengths and exit composition of a batch.

    Surface and semantic rates are ground truth on the final sequences,
    whatever the exit routing.
    """
    n = len(trajectories)
    rewards = [t.reward for t in trajectories]
    surface = [surface_check(t.final_sequence, tasks[t.prompt_id]) for t in trajectories]
    semantic = [
        ok and semantic_check(t.final_sequence, tasks[t.prompt_id])
        for ok, t in zip(surface, trajectories)
    ]
    exits = {reason.value: 0.0 for reason in ExitReason}
    for t in trajectories:
        exits[ExitReason(t.exit_reason).value] += 1.0 / n
    return {
        "mean_reward": _mean(rewards),
        "tier_mass": {
            name: sum(abs(r - value) < 1e-12 for r in rewards) / n
            for name, value in TIERS.items()
        },
        "surface_rate": _mean(surface),
        "semantic_rate": _mean(semantic),
        "mean_steps": _mean([len(t.steps) for t in trajectories]),
        "exit_composition": exits,
        "finish_without_compile": _mean([finished_without_compile(t) for t in trajectories]),
    }


class ExperimentRunner:
    """
    Runs one experiment arm end to end.

    Args:
        cfg: Validated run configuration
        out_dir: Directory for metrics, dumps and the final parameter table;
            nothing is written when omitted
        train_tasks: Train split override (otherwise from ``cfg.data``)
        eval_tasks: Eval split override (otherwise from ``cfg.data``)

    Raises:
        ConfigError: If the configuration is inconsistent; raised before any
            rollout is sampled
    """

    def __init__(
        self,
        cfg: RunConfig,
        out_dir: Optional[Union[str, Path]] = None,
        train_tasks: Optional[List[ToyTask]] = None,
        eval_tasks: Optional[List[ToyTask]] = None,
    ):
        self.cfg = cfg
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.eval_tasks = eval_tasks if eval_tasks is not None else self._load_eval_tasks()
        self.train_tasks = (
            train_tasks if train_tasks is not None else self._load_train_tasks(self.eval_tasks)
        )
        self._validate()
        self.tasks = {t.task_id: t for t in self.train_tasks + self.eval_tasks}

        self.params = PolicyParams(slot_sizes=slot_sizes(cfg.env.length))
        self.reference = self.params.snapshot()
        self.limits = cfg.rollout_limits()
        self.clip = cfg.grpo.clip_config()
        self.kl_cfg = cfg.distill.kl_config()
        self.mode = cfg.distill.distill_mode()
        self.judge = self._make_judge(JUDGE_STREAM)
        self.records: List[MetricsRecord] = []

    # Setup

    def _load_eval_tasks(self) -> List[ToyTask]:
        data, env = self.cfg.data, self.cfg.env
        if data.eval_tasks:
            return read_tasks(data.eval_tasks)
        return generate_tasks(data.num_eval, data.task_seed + 1, env.length, env.corruptions)

    def _load_train_tasks(self, eval_tasks: List[ToyTask]) -> List[ToyTask]:
        data, env = self.cfg.data, self.cfg.env
        if data.train_tasks:
            return read_tasks(data.train_tasks)
        return generate_tasks(
            data.num_train, data.task_seed, env.length, env.corruptions, exclude=eval_tasks
        )

    def _validate(self) -> None:
        cfg = self.cfg
        if not self.train_tasks:
            raise ConfigError("the train split is empty")
        if not self.eval_tasks:
            raise ConfigError("the eval split is empty")
        for task in self.train_tasks + self.eval_tasks:
            if task.length != cfg.env.length:
                raise ConfigError(
                    f"task {task.task_id} has length {task.length}, env.length is {cfg.env.length}"
                )
        train_ids = {t.task_id for t in self.train_tasks}
        if train_ids & {t.task_id for t in self.eval_tasks}:
            raise ConfigError("train and eval splits share task ids")
        if {task_key(t) for t in self.train_tasks} & {task_key(t) for t in self.eval_tasks}:
            raise ConfigError("train and eval splits share task content")
        vocab = max(slot_sizes(cfg.env.length).values())
        if cfg.distill.topk is not None and cfg.distill.topk > vocab:
            raise ConfigError(f"distill.topk={cfg.distill.topk} exceeds the vocabulary ({vocab})")
        for name in ("steps", "eval_interval", "prompts_per_update", "log_interval"):
            if getattr(cfg.train, name) < 1:
                raise ConfigError(f"train.{name} must be >= 1")

    def _make_judge(self, stream: int) -> SyntheticJudge:
        judge = self.cfg.judge
        return SyntheticJudge(
            sensitivity=judge.sensitivity,
            specificity=judge.specificity,
            seed=[self.cfg.train.seed, stream],
            fault_rate=judge.fault_rate,
            train_retries=judge.train_retries,
            eval_retries=judge.eval_retries,
            backoff_seconds=judge.backoff_seconds,
        )

    # Rollout and settlement

    def settle_trajectory(
        self,
        trajectory: Trajectory,
        task: ToyTask,
        judge: SyntheticJudge,
        evaluation: bool = False,
        scorer_rng: Optional[np.random.Generator] = None,
    ) -> Trajectory:
        """
        Route, settle and (in training) score a sampled trajectory.

        Abnormal exits are routed without calling the judge. Normal exits
        evaluate the surface check on the final sequence and call the judge
        only when the scheme reads the verdict and the check passed.
        """
        semantic = semantic_check(trajectory.final_sequence, task)
        trajectory = trajectory.copy(update={"semantic_ok": semantic})
        handling = route(trajectory.exit_reason)
        if handling != Handling.NORMAL:
            return apply_routing(trajectory, handling)

        scheme = self.cfg.reward.scheme
        compile_ok = surface_check(trajectory.final_sequence, task)
        verdict = SemanticVerdict.SKIPPED
        if compile_ok and needs_semantics(scheme):
            verdict = judge.judge(semantic, evaluation=evaluation)
        update = {
            "compile_ok": compile_ok,
            "verdict": verdict,
            "reward": settle(scheme, compile_ok, verdict),
        }
        scores_cfg = self.cfg.process_scores
        if not evaluation and scores_cfg.enabled:
            scores = synthetic_step_scorer(
                trajectory, task, self.cfg.scorer, scores_cfg.drop_prob, scorer_rng
            )
            update["steps"] = [
                step.copy(update={"s_i": s}) for step, s in zip(trajectory.steps, scores)
            ]
        return trajectory.copy(update=update)

    def _rollout(self, task: ToyTask, update: int, task_idx: int, k: int) -> Trajectory:
        seed = self.cfg.train.seed
        rng = np.random.default_rng([seed, update, task_idx, k])
        trajectory = sample_trajectory(
            self.params,
            task,
            self.limits,
            rng,
            hint_visible=self.mode is not None and self.mode.mode == "pi_distill",
            temperature=self.cfg.train.temperature,
            ref_params=self.reference,
            compile_timeout_prob=self.cfg.env.compile_timeout_prob,
            record_teacher=self.mode is not None,
        )
        scorer_rng = np.random.default_rng([seed, update, task_idx, k, SCORER_STREAM])
        return self.settle_trajectory(trajectory, task, self.judge, scorer_rng=scorer_rng)

    def _group(self, prompt_id: str, trajectories: List[Trajectory]) -> RolloutGroup:
        eps = self.cfg.grpo.degeneracy_eps
        if self.mode is not None:
            group = shaped_group(prompt_id, trajectories, self.params, self.kl_cfg, self.mode, eps)
        else:
            group = build_group(prompt_id, trajectories, eps)
        enabled = self.cfg.process_scores.enabled
        weighted = [
            traj.copy(update={
                "token_weights": trajectory_token_weights(traj, adv, enabled).tolist(),
                "advantage": adv,
            })
            for traj, adv in zip(group.trajectories, group.advantages)
        ]
        return group.copy(update={"trajectories": weighted})

    def _prompts(self, update: int) -> List[Tuple[int, ToyTask]]:
        rng = np.random.default_rng([self.cfg.train.seed, PROMPT_STREAM, update])
        count = min(self.cfg.train.prompts_per_update, len(self.train_tasks))
        picks = rng.choice(len(self.train_tasks), size=count, replace=False)
        return [(int(i), self.train_tasks[int(i)]) for i in picks]

    # Training

    def train_step(self, update: int) -> MetricsRecord:
        """
        One update: sample K rollouts per prompt, settle, group, step.

        Returns:
            The update's train metrics record
        """
        groups: List[RolloutGroup] = []
        settled: List[Trajectory] = []
        for task_idx, task in self._prompts(update):
            trajectories = [
                self._rollout(task, update, task_idx, k) for k in range(self.cfg.grpo.k)
            ]
            settled.extend(trajectories)
            groups.append(self._group(task.task_id, trajectories))

        result = grpo_loss(groups, self.clip, self.params, kl_beta_in_advantage(self.cfg))
        interval = self.cfg.train.dump_interval
        if self.out_dir is not None and interval > 0 and update % interval == 0:
            self._dump(update, groups, result)
        self.params.apply_gradient(result.grad, self.cfg.train.lr)

        trace = schedule(rollout_work_items(settled), self.cfg.pools)
        record = MetricsRecord(
            phase="train",
            update=update,
            judged_semantic_rate=None,
            grad_norm=grad_norm(result.grad),
            loss=result.loss,
            entropy=result.entropy,
            makespan=makespan(trace),
            peak_compile=occupancy_peaks(trace).get("compile", 0),
            **rollout_summary(settled, self.tasks),
        )
        if update % self.cfg.train.log_interval == 0:
            logger.info(
                "update %d: reward=%.3f C=%.3f S=%.3f steps=%.1f loss=%.4f",
                update, record.mean_reward, record.surface_rate, record.semantic_rate,
                record.mean_steps, record.loss,
            )
        return record

    def _dump(self, update: int, groups: List[RolloutGroup], result: LossResult) -> None:
        append_jsonl(self.out_dir / DUMP_FILE, {
            "update": update,
            "config": self.cfg.to_flat(),
            "loss": result.loss,
            "params": self.params.to_record(),
            "groups": [g.to_record() for g in groups],
        })

    def _emit(self, record: MetricsRecord) -> MetricsRecord:
        self.records.append(record)
        if self.out_dir is not None:
            append_jsonl(self.out_dir / METRICS_FILE, record.to_record())
        return record

    def run_training(self) -> List[MetricsRecord]:
        """
        Train for ``train.steps`` updates.

        Eval records are written before every ``train.eval_interval``-th
        update and once after the last one. Metrics go to ``metrics.jsonl``
        and the final parameter table to ``params.json`` under ``out_dir``.

        Returns:
            All metrics records in write order
        """
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            for name in (METRICS_FILE, DUMP_FILE):
                path = self.out_dir / name
                if path.exists():
                    path.unlink()
        train = self.cfg.train
        logger.info(
            "training %s/%s arm for %d updates (seed=%d)",
            self.cfg.reward.scheme.value, self.cfg.distill.mode, train.steps, train.seed,
        )
        for update in range(train.steps):
            if update % train.eval_interval == 0:
                self._emit(self.eval_record(update))
            self._emit(self.train_step(update))
        self._emit(self.eval_record(train.steps))
        if self.out_dir is not None:
            self.params.save(self.out_dir / PARAMS_FILE)
        return self.records

    # Evaluation

    def _evaluate(
        self,
        params: PolicyParams,
        tasks: List[ToyTask],
    ) -> Tuple[List[Trajectory], List[bool]]:
        if not tasks:
            raise ConfigError("cannot evaluate on an empty split")
        judge = self._make_judge(EVAL_JUDGE_STREAM)
        ev = self.cfg.eval
        trajectories, judged = [], []
        for idx, task in enumerate(tasks):
            rng = np.random.default_rng([self.cfg.train.seed, EVAL_STREAM, idx])
            trajectory = sample_trajectory(
                params,
                task,
                self.limits,
                rng,
                hint_visible=False,
                temperature=ev.temperature,
                greedy=ev.greedy,
                ref_params=params,
                compile_timeout_prob=self.cfg.env.compile_timeout_prob,
                record_teacher=False,
            )
            trajectory = self.settle_trajectory(trajectory, task, judge, evaluation=True)
            trajectories.append(trajectory)
            verdict = trajectory.verdict
            # compile-only settlement never asked the judge
            if verdict == SemanticVerdict.SKIPPED and trajectory.compile_ok:
                verdict = judge.judge(bool(trajectory.semantic_ok), evaluation=True)
            judged.append(bool(trajectory.compile_ok) and verdict == SemanticVerdict.CONSISTENT)
        return trajectories, judged

    def run_eval(
        self,
        params: Optional[PolicyParams] = None,
        tasks: Optional[List[ToyTask]] = None,
    ) -> EvalSummary:
        """
        Evaluate hint-free on a fixed split.

        Args:
            params: Parameters to evaluate (current policy when omitted)
            tasks: Split to evaluate (the eval split when omitted)

        Returns:
            EvalSummary

        Raises:
            ConfigError: If the split is empty
        """
        params = params if params is not None else self.params
        tasks = tasks if tasks is not None else self.eval_tasks
        trajectories, judged = self._evaluate(params, tasks)
        summary = rollout_summary(trajectories, {t.task_id: t for t in tasks})
        return EvalSummary(
            n=len(trajectories),
            surface_rate=summary["surface_rate"],
            semantic_rate=summary["semantic_rate"],
            judged_semantic_rate=_mean(judged),
            mean_steps=summary["mean_steps"],
            exit_composition=summary["exit_composition"],
        )

    def eval_record(self, update: int) -> MetricsRecord:
        """Eval metrics record of the current policy on the eval split."""
        trajectories, judged = self._evaluate(self.params, self.eval_tasks)
        entropies = [
            self.params.entropy(token.context)
            for t in trajectories for token in t.tokens if token.role_flag
        ]
        return MetricsRecord(
            phase="eval",
            update=update,
            judged_semantic_rate=_mean(judged),
            grad_norm=None,
            loss=None,
            entropy=_mean(entropies),
            makespan=None,
            peak_compile=None,
            **rollout_summary(trajectories, self.tasks),
        )


def kl_beta_in_advantage(cfg: RunConfig) -> float:
    """KL weight injected into per-token advantages (0 unless that mode is on)."""
    if cfg.distill.mode != "off" and cfg.distill.aggregation == "per_token_in_advantage":
        return cfg.distill.beta
    return 0.0


def _first_bad_token(data: Dict) -> Optional[int]:
    """
    First token of a raw trajectory record whose role flag disagrees with its
    step span or with the stored token weight.
    """
    tokens = data.get("tokens") or []
    weights = data.get("token_weights") or []
    override = data.get("loss_mask_override")
    spans = {}
    for step in data.get("steps") or []:
        a0, a1 = step["assistant_span"]
        e0, e1 = step["echo_span"]
        spans.update({t: 1 for t in range(a0, a1)})
        spans.update({t: 0 for t in range(e0, e1)})
    for t, token in enumerate(tokens):
        flag = token.get("role_flag")
        if flag not in (0, 1) or spans.get(t, flag) != flag:
            return t
        routed = flag * (override[t] if override is not None and t < len(override) else 1)
        if t < len(weights) and routed == 0 and weights[t] != 0.0:
            return t
    return None


def _parse_group(data: Dict, first_index: int) -> RolloutGroup:
    """Validate a dumped group, turning invalid members into replay mismatches."""
    try:
        return RolloutGroup.from_record(data)
    except ValidationError as e:
        for offset, raw in enumerate(data.get("trajectories") or []):
            try:
                Trajectory.from_record(raw)
            except ValidationError as inner:
                index = first_index + offset
                raise ReplayMismatchError(
                    f"trajectory {index} no longer validates: {inner}",
                    trajectory_index=index,
                    token_index=_first_bad_token(raw),
                ) from inner
        raise ReplayMismatchError(
            f"group starting at trajectory {first_index} no longer validates: {e}",
            trajectory_index=first_index,
        ) from e


def _replay_group(
    group: RolloutGroup,
    cfg: RunConfig,
    first_index: int,
    tol: float,
) -> RolloutGroup:
    rewards = [t.training_reward for t in group.trajectories]
    eps = cfg.grpo.degeneracy_eps
    if group.expanded:
        advantages = group_advantages(rewards[:group.k], eps) * 2
    else:
        advantages = group_advantages(rewards, eps)
    enabled = cfg.process_scores.enabled
    rebuilt = []
    for offset, (traj, adv) in enumerate(zip(group.trajectories, advantages)):
        index = first_index + offset
        if traj.advantage is None or abs(traj.advantage - adv) > tol:
            raise ReplayMismatchError(
                f"trajectory {index}: stored advantage {traj.advantage} != {adv}",
                trajectory_index=index,
            )
        weights = trajectory_token_weights(traj, adv, enabled)
        stored = traj.token_weights
        if stored is None or len(stored) != len(weights):
            raise ReplayMismatchError(
                f"trajectory {index}: stored token weights missing or misaligned",
                trajectory_index=index,
            )
        for t, (w_stored, w) in enumerate(zip(stored, weights)):
            if abs(w_stored - w) > tol:
                raise ReplayMismatchError(
                    f"trajectory {index}, token {t}: stored weight {w_stored} != {w}",
                    trajectory_index=index,
                    token_index=t,
                )
        rebuilt.append(traj.copy(update={"token_weights": weights.tolist()}))
    return group.copy(update={"trajectories": rebuilt, "advantages": advantages})


def replay(path: Union[str, Path], tol: float = REPLAY_TOL) -> List[ReplayResult]:
    """
    Recompute masks, weights, advantages and losses from a trajectory dump.

    Args:
        path: ``trajectories.jsonl`` written during training
        tol: Largest accepted absolute difference

    Returns:
        One ReplayResult per dumped update

    Raises:
        ReplayMismatchError: On the first recomputed value that differs
    """
    results = []
    for record in iter_jsonl(path):
        cfg = RunConfig.from_flat(record["config"])
        params = PolicyParams.from_record(record["params"]) if record.get("params") else None
        groups = []
        index = 0
        for data in record["groups"]:
            group = _parse_group(data, index)
            groups.append(_replay_group(group, cfg, index, tol))
            index += len(group.trajectories)
        clip = cfg.grpo.clip_config()
        loss = grpo_loss(groups, clip, params, kl_beta_in_advantage(cfg)).loss
        if abs(loss - record["loss"]) > tol:
            raise ReplayMismatchError(
                f"update {record['update']}: stored loss {record['loss']!r} != {loss!r}"
            )
        results.append(ReplayResult(record["update"], record["loss"], loss, index))
        logger.info("replayed update %d: loss %.12f", record["update"], loss)
    return results


def export_metrics_csv(metrics_path: Union[str, Path], csv_path: Union[str, Path]) -> int:
    """
    Flatten a metrics log into CSV for plotting.

    Scalars become columns; ``tier_mass`` and ``exit_composition`` expand to
    ``tier_<tier>`` and ``exit_<reason>`` columns. Series are written raw.

    Returns:
        Rows written
    """
    rows = []
    for record in iter_jsonl(metrics_path):
        row = {k: v for k, v in record.items() if not isinstance(v, dict)}
        row.update({f"tier_{k}": v for k, v in record.get("tier_mass", {}).items()})
        row.update({f"exit_{k}": v for k, v in record.get("exit_composition", {}).items()})
        rows.append(row)
    columns = list(MetricsRecord.__fields__)
    columns = [c for c in columns if c not in ("tier_mass", "exit_composition")]
    columns += [f"tier_{k}" for k in TIERS] + [f"exit_{r.value}" for r in ExitReason]
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with csv_path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    return len(rows)
