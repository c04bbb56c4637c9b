"""
Toy repair environment, rollout sampler and synthetic step scorer.

An assistant turn is one to three categorical draws from the tabular
policy: the action kind, then a location for view/edit, then a symbol for
edit. Each draw reads the row of a context key built from what the agent
has observed. The hinted branch reads ``hint|`` rows keyed on the reference
repair instead; it is used only for training-time distillation.
"""
import logging
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from .governance import ExitMonitor
from .policy import HINT_PREFIX, PolicyParams
from .tasks import distance_to_class, first_violation, surface_check, violation_count
from ..exceptions import EnvironmentClosedError, MalformedTrajectoryError
from ..models.governance import ExitReason, RolloutEvent, RolloutLimits
from ..models.run import ScorerSection
from ..models.tasks import ALPHABET, ToyTask
from ..models.trajectory import ActionKind, StepRecord, TokenRecord, Trajectory, structure_problems

logger = logging.getLogger(__name__)

KINDS = [ActionKind.VIEW, ActionKind.EDIT, ActionKind.COMPILE, ActionKind.FINISH, ActionKind.OTHER]
KIND_INDEX = {kind: i for i, kind in enumerate(KINDS)}
ECHO_WORDS = ["ok", "err", "timeout", "done", "invalid"] + ALPHABET
ECHO_INDEX = {word: i for i, word in enumerate(ECHO_WORDS)}


def slot_sizes(length: int) -> Dict[str, int]:
    """Vocabulary size of each draw slot for a sequence length."""
    return {"kind": len(KINDS), "loc": length, "sym": len(ALPHABET)}


def echo_token_id(word: str) -> int:
    """Echo vocabulary id; positions follow the fixed words."""
    if word in ECHO_INDEX:
        return ECHO_INDEX[word]
    return len(ECHO_WORDS) + int(word)


class EnvAction(NamedTuple):
    """A tool call: kind plus optional location and symbol."""
    kind: ActionKind
    loc: Optional[int] = None
    symbol: Optional[str] = None


class EnvStep(NamedTuple):
    """Result of one tool call."""
    echo: List[str]
    state: Tuple[str, ...]
    terminal: bool
    timed_out: bool = False


class ToyFixEnv:
    """
    Single-writer environment holding one task's working sequence.

    Args:
        task: Task to repair
        rng: Generator for compile timeouts
        compile_timeout_prob: Probability that a compile call times out
    """

    def __init__(
        self,
        task: ToyTask,
        rng: Optional[np.random.Generator] = None,
        compile_timeout_prob: float = 0.0,
    ):
        self.task = task
        self.sequence = list(task.initial_sequence)
        self.closed = False
        self.last_kind = "start"
        self.verdict = "none"
        self.err_pos: Optional[int] = None
        self.compiled = False
        self.compile_timeout_prob = compile_timeout_prob
        self._rng = rng

    @property
    def state(self) -> Tuple[str, ...]:
        """Current working sequence."""
        return tuple(self.sequence)

    def _result(self, echo: List[str], terminal: bool = False, timed_out: bool = False) -> EnvStep:
        return EnvStep(echo=echo, state=self.state, terminal=terminal, timed_out=timed_out)

    def step(self, action: EnvAction) -> EnvStep:
        """
        Execute one tool call.

        Out-of-range locations and unknown symbols echo ``invalid`` without
        changing the state.

        Raises:
            EnvironmentClosedError: After ``finish``
            ValueError: For a kind that is not a tool call
        """
        if self.closed:
            raise EnvironmentClosedError("no actions are accepted after finish")
        kind = ActionKind(action.kind)
        if kind == ActionKind.OTHER:
            raise ValueError("'other' is not a tool call")
        self.last_kind = kind.value

        if kind in (ActionKind.VIEW, ActionKind.EDIT):
            loc = action.loc
            if loc is None or not 0 <= loc < len(self.sequence):
                return self._result(["invalid"])
            if kind == ActionKind.VIEW:
                return self._result([self.sequence[loc]])
            if action.symbol not in ALPHABET:
                return self._result(["invalid"])
            self.sequence[loc] = action.symbol
            return self._result(["ok"])

        if kind == ActionKind.COMPILE:
            self.compiled = True
            if (
                self.compile_timeout_prob > 0
                and self._rng is not None
                and self._rng.random() < self.compile_timeout_prob
            ):
                self.verdict = "timeout"
                return self._result(["timeout"], timed_out=True)
            self.err_pos = first_violation(self.sequence)
            if self.err_pos is None:
                self.verdict = "ok"
                return self._result(["ok"])
            self.verdict = "err"
            return self._result(["err", str(self.err_pos)])

        self.closed = True
        return self._result(["done"], terminal=True)

    # Hint-free context keys

    def kind_key(self) -> str:
        bucket = min(2, violation_count(self.sequence))
        return f"kind|{self.last_kind}|{self.verdict}|{bucket}"

    def loc_key(self, kind: ActionKind) -> str:
        err = "-" if self.err_pos is None else self.err_pos
        return f"loc|{kind.value}|{err}"

    def sym_key(self, loc: int) -> str:
        return f"sym|{self.sequence[loc]}|{int(loc == self.err_pos)}"

    # Hinted context keys (reference repair visible)

    def _mismatches(self) -> List[int]:
        return [i for i, (a, b) in enumerate(zip(self.sequence, self.task.gt_repair)) if a != b]

    def hint_kind_key(self) -> str:
        bucket = min(2, len(self._mismatches()))
        return f"{HINT_PREFIX}kind|{self.last_kind}|{self.verdict}|{bucket}"

    def hint_loc_key(self, kind: ActionKind) -> str:
        mismatches = self._mismatches()
        target = mismatches[0] if mismatches else "-"
        return f"{HINT_PREFIX}loc|{kind.value}|{target}"

    def hint_sym_key(self, loc: int) -> str:
        return f"{HINT_PREFIX}sym|{self.task.gt_repair[loc]}"


def env_step(env: ToyFixEnv, action: EnvAction) -> EnvStep:
    """Apply an action to an environment: (echo, new state, terminal)."""
    return env.step(action)


class _Sampler:
    """Per-rollout token drawing and log-probability bookkeeping."""

    def __init__(
        self,
        params: PolicyParams,
        ref_params: PolicyParams,
        rng: np.random.Generator,
        hint_visible: bool,
        record_teacher: bool,
        temperature: float,
        greedy: bool,
    ):
        self.params = params
        self.ref = ref_params
        self.rng = rng
        self.hint_visible = hint_visible
        self.record_teacher = record_teacher or hint_visible
        self.temperature = temperature
        self.greedy = greedy

    def draw(self, step: int, student_key: str, hint_key: Optional[str]) -> TokenRecord:
        sample_key = hint_key if self.hint_visible else student_key
        logp = self.params.log_probs(sample_key, self.temperature)
        if self.greedy:
            token = int(np.argmax(logp))
        else:
            token = int(self.rng.choice(len(logp), p=np.exp(logp)))
        logp_student = self.params.logp(student_key, token)
        logp_teacher = logp_ref_teacher = None
        if self.record_teacher:
            logp_teacher = self.params.logp(hint_key, token)
            logp_ref_teacher = self.ref.logp(hint_key, token)
        return TokenRecord.construct(
            token_id=token,
            role_flag=1,
            step_index=step,
            logp_current=logp_student,
            logp_old=logp_teacher if self.hint_visible else logp_student,
            logp_ref=self.ref.logp(student_key, token),
            logp_teacher=logp_teacher,
            logp_ref_teacher=logp_ref_teacher,
            context=student_key,
            alt_context=hint_key if self.record_teacher else None,
        )


def sample_trajectory(
    params: PolicyParams,
    task: ToyTask,
    limits: RolloutLimits,
    rng: np.random.Generator,
    hint_visible: bool = False,
    temperature: float = 1.0,
    greedy: bool = False,
    ref_params: Optional[PolicyParams] = None,
    compile_timeout_prob: float = 0.0,
    record_teacher: bool = True,
) -> Trajectory:
    """
    Roll out the policy on a task until an exit rule fires.

    Log-probabilities are recorded at temperature 1 under the sampling-time
    parameters, so ``logp_old`` equals ``logp_current`` for hint-free
    rollouts. Hinted rollouts sample from the ``hint|`` rows and record the
    hint-free log-probability as ``logp_current``.

    Args:
        params: Current policy
        task: Task to repair
        limits: Budgets and detector thresholds
        rng: Rollout generator (sampling and compile timeouts)
        hint_visible: Sample from the hinted branch
        temperature: Sampling temperature
        greedy: Take the most likely token at every draw
        ref_params: Frozen reference policy (``params`` when omitted)
        compile_timeout_prob: Probability that a compile call times out
        record_teacher: Record hinted keys and log-probabilities; evaluation
            rollouts turn this off so no context reveals the repair

    Returns:
        Unsettled trajectory (reward 0, no verdict)
    """
    env = ToyFixEnv(task, rng, compile_timeout_prob)
    sampler = _Sampler(params, ref_params or params, rng, hint_visible, record_teacher,
                       temperature, greedy)
    monitor = ExitMonitor(limits)
    length = task.length
    tokens: List[TokenRecord] = []
    steps: List[StepRecord] = []
    reason: Optional[ExitReason] = None
    i = 0

    while reason is None:
        teacher = sampler.record_teacher
        a0 = len(tokens)
        record = sampler.draw(i, env.kind_key(), env.hint_kind_key() if teacher else None)
        tokens.append(record)
        kind = KINDS[record.token_id]
        stream = [record.token_id]
        loc: Optional[int] = None
        symbol: Optional[str] = None
        if kind in (ActionKind.VIEW, ActionKind.EDIT):
            record = sampler.draw(i, env.loc_key(kind), env.hint_loc_key(kind) if teacher else None)
            tokens.append(record)
            loc = record.token_id
            stream.append(len(KINDS) + loc)
        if kind == ActionKind.EDIT:
            record = sampler.draw(i, env.sym_key(loc), env.hint_sym_key(loc) if teacher else None)
            tokens.append(record)
            symbol = ALPHABET[record.token_id]
            stream.append(len(KINDS) + length + record.token_id)
        a1 = len(tokens)

        outcome: Optional[EnvStep] = None
        if kind != ActionKind.OTHER:
            outcome = env.step(EnvAction(kind, loc, symbol))
            for word in outcome.echo:
                tokens.append(TokenRecord.construct(
                    token_id=echo_token_id(word),
                    role_flag=0,
                    step_index=i,
                    logp_current=0.0,
                    logp_old=0.0,
                    logp_ref=0.0,
                    logp_teacher=None,
                    logp_ref_teacher=None,
                    context=None,
                    alt_context=None,
                ))
        steps.append(StepRecord.construct(
            action_kind=kind,
            assistant_span=(a0, a1),
            echo_span=(a1, len(tokens)),
            n_i=a1 - a0,
            s_i=None,
            loc=loc,
            symbol=symbol,
            tool_calls=0 if outcome is None else 1,
        ))

        reason = monitor.observe(RolloutEvent.construct(
            kind="turn",
            step=i,
            output_tokens=a1 - a0,
            context_tokens=len(tokens),
            tool_calls=0 if outcome is None else 1,
            tokens=stream,
            finish=kind == ActionKind.FINISH,
            timed_out=False,
        ))
        if reason is None and kind == ActionKind.COMPILE:
            reason = monitor.observe(RolloutEvent.construct(
                kind="compile_result",
                step=i,
                output_tokens=0,
                context_tokens=len(tokens),
                tool_calls=0,
                tokens=[],
                finish=False,
                timed_out=outcome.timed_out,
            ))
        i += 1

    problems = structure_problems(steps, tokens)
    if problems:
        raise MalformedTrajectoryError("; ".join(problems))
    return Trajectory.construct(
        prompt_id=task.task_id,
        steps=steps,
        tokens=tokens,
        exit_reason=reason,
        reward=0.0,
        shaped_reward=None,
        loss_mask_override=None,
        compile_ok=None,
        verdict=None,
        semantic_ok=None,
        final_sequence=list(env.sequence),
        hint_visible=hint_visible,
        copy_weight=1.0,
        token_kl=None,
        token_weights=None,
        advantage=None,
    )


def synthetic_step_scorer(
    trajectory: Trajectory,
    task: ToyTask,
    cfg: Optional[ScorerSection] = None,
    drop_prob: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> List[Optional[float]]:
    """
    Deterministic information-gain rubric, one score per step.

    The working sequence is replayed from the task's initial sequence.
    Compiles score at least the compile base (full marks when the sequence
    passes); first views score ``first_view`` and repeated views of a
    location are capped; edits score by how they change the Hamming distance
    to the nearest class member; finish scores by the final surface check.

    Args:
        trajectory: Sampled trajectory
        task: Its task
        cfg: Rubric constants
        drop_prob: Probability that a step is left unscored (None)
        rng: Generator for dropped scores

    Returns:
        s_i per step, each in [0, 1] or None when dropped
    """
    cfg = cfg or ScorerSection()
    sequence = list(task.initial_sequence)
    viewed = set()
    scores: List[Optional[float]] = []
    for step in trajectory.steps:
        kind = ActionKind(step.action_kind)
        valid_loc = step.loc is not None and 0 <= step.loc < len(sequence)
        if kind == ActionKind.COMPILE:
            passes = surface_check(sequence, task)
            score = cfg.compile_base + (1.0 - cfg.compile_base) * passes
        elif kind == ActionKind.VIEW and valid_loc:
            score = cfg.redundant_view_cap if step.loc in viewed else cfg.first_view
            viewed.add(step.loc)
        elif kind == ActionKind.EDIT and valid_loc and step.symbol in ALPHABET:
            before = distance_to_class(sequence, task.semantic_class)
            sequence[step.loc] = step.symbol
            after = distance_to_class(sequence, task.semantic_class)
            if after == 0:
                score = cfg.edit_reach
            elif after < before:
                score = cfg.edit_closer
            elif after == before:
                score = cfg.edit_neutral
            else:
                score = cfg.edit_worse
        elif kind == ActionKind.FINISH:
            score = cfg.finish_ok if surface_check(sequence, task) else cfg.finish_fail
        else:
            score = cfg.other
        if drop_prob > 0 and rng is not None and rng.random() < drop_prob:
            scores.append(None)
        else:
            scores.append(float(score))
    return scores
