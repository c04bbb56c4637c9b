"""
Weak-feedback repair tasks over a six-symbol alphabet.

The surface rule C is balanced-delimiter well-formedness. The semantic
class S of a task is its reference repair modulo commutation of adjacent
filler symbols: sequences in the class keep every delimiter in place and
each maximal filler run as a permutation of the reference run. Every class
member is balanced, so S implies C, while an all-filler sequence is
balanced but outside any class that contains a delimiter.
"""
import itertools
import logging
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from ..exceptions import ConfigError
from ..models.tasks import ALPHABET, CLOSERS, FILLERS, OPENERS, ToyTask
from ..utils.io import read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

Symbols = Sequence[str]


def first_violation(sequence: Symbols) -> Optional[int]:
    """
    Position of the first delimiter that breaks balance.

    A closer with no matching opener is reported where it stands; otherwise
    the earliest opener left unmatched at the end is reported.

    Returns:
        Token position, or None when the sequence is balanced
    """
    stack: List[int] = []
    for i, symbol in enumerate(sequence):
        if symbol in OPENERS:
            stack.append(i)
        elif symbol in CLOSERS:
            if not stack or sequence[stack[-1]] != CLOSERS[symbol]:
                return i
            stack.pop()
    return stack[0] if stack else None


def violation_count(sequence: Symbols) -> int:
    """Delimiters left unmatched by a greedy stack pass."""
    stack: List[str] = []
    bad = 0
    for symbol in sequence:
        if symbol in OPENERS:
            stack.append(symbol)
        elif symbol in CLOSERS:
            if stack and stack[-1] == CLOSERS[symbol]:
                stack.pop()
            else:
                bad += 1
    return bad + len(stack)


def balanced(sequence: Symbols) -> bool:
    """Whether every delimiter is matched and properly nested."""
    return first_violation(sequence) is None


SURFACE_RULES: Dict[str, Callable[[Symbols], bool]] = {
    "balanced_delimiters": balanced,
}


def surface_check(sequence: Symbols, task: Optional[ToyTask] = None) -> bool:
    """
    Necessary-condition check C.

    Args:
        sequence: Working sequence
        task: Task naming the surface rule (balanced delimiters by default)
    """
    rule = task.surface_rule if task is not None else "balanced_delimiters"
    if rule not in SURFACE_RULES:
        raise ValueError(f"unknown surface rule {rule!r}")
    return SURFACE_RULES[rule](sequence)


def canonical(sequence: Symbols) -> str:
    """Class identifier: the sequence with every maximal filler run sorted."""
    out: List[str] = []
    run: List[str] = []
    for symbol in sequence:
        if symbol in FILLERS:
            run.append(symbol)
            continue
        out.extend(sorted(run))
        run = []
        out.append(symbol)
    out.extend(sorted(run))
    return "".join(out)


def semantic_check(sequence: Symbols, task: ToyTask) -> bool:
    """Semantic predicate S: membership in the task's class."""
    return len(sequence) == task.length and canonical(sequence) == task.semantic_class


@lru_cache(maxsize=4096)
def class_members(semantic_class: str) -> Tuple[Tuple[str, ...], ...]:
    """Every sequence of a class, in sorted order."""
    pieces: List[List[Tuple[str, ...]]] = []
    run: List[str] = []
    for symbol in list(semantic_class) + [None]:
        if symbol in FILLERS:
            run.append(symbol)
            continue
        if run:
            pieces.append(sorted(set(itertools.permutations(run))))
            run = []
        if symbol is not None:
            pieces.append([(symbol,)])
    members = {tuple(itertools.chain.from_iterable(p)) for p in itertools.product(*pieces)}
    return tuple(sorted(members))


def distance_to_class(sequence: Symbols, semantic_class: str) -> int:
    """Hamming distance to the nearest member of a class."""
    seq = tuple(sequence)
    return min(sum(a != b for a, b in zip(seq, m)) for m in class_members(semantic_class))


@lru_cache(maxsize=8)
def _edit_space(length: int) -> Tuple[Tuple[Tuple[str, ...], bool, str], ...]:
    """Every sequence of a length with its surface verdict and class id."""
    return tuple(
        (seq, balanced(seq), canonical(seq))
        for seq in itertools.product(ALPHABET, repeat=length)
    )


def verify_task(task: ToyTask) -> int:
    """
    Exhaustively verify the weak-feedback construction of a task.

    Checks S => C on every sequence of the task's length and counts the
    shortcuts that satisfy C without S.

    Returns:
        Number of shortcuts

    Raises:
        ValueError: If a class member fails C, no shortcut exists, or the
            initial sequence already passes C
    """
    shortcuts = 0
    for seq, surface_ok, cls in _edit_space(task.length):
        in_class = cls == task.semantic_class
        if in_class and not surface_ok:
            raise ValueError(f"{task.task_id}: class member {''.join(seq)} fails the surface rule")
        if surface_ok and not in_class:
            shortcuts += 1
    if shortcuts == 0:
        raise ValueError(f"{task.task_id}: no sequence passes C outside the class")
    if surface_check(task.initial_sequence, task):
        raise ValueError(f"{task.task_id}: initial sequence already passes the surface rule")
    return shortcuts


def _random_repair(rng: np.random.Generator, length: int) -> List[str]:
    while True:
        seq = [ALPHABET[i] for i in rng.integers(0, len(ALPHABET), size=length)]
        if balanced(seq) and any(s not in FILLERS for s in seq):
            return seq


def _corrupt(rng: np.random.Generator, repair: List[str], corruptions: int) -> List[str]:
    delimiters = [i for i, s in enumerate(repair) if s not in FILLERS]
    count = min(corruptions, len(delimiters))
    while True:
        broken = list(repair)
        for pos in rng.choice(delimiters, size=count, replace=False):
            choices = [s for s in ALPHABET if s != repair[pos]]
            broken[pos] = choices[int(rng.integers(0, len(choices)))]
        if not balanced(broken):
            return broken


def generate_tasks(
    num_tasks: int,
    seed: int = 0,
    length: int = 5,
    corruptions: int = 1,
    exclude: Optional[Iterable[ToyTask]] = None,
) -> List[ToyTask]:
    """
    Generate verified repair tasks.

    Args:
        num_tasks: Tasks to generate
        seed: Generator seed
        length: Sequence length
        corruptions: Delimiters corrupted per task
        exclude: Tasks whose (initial, repair) pairs must not be reused

    Returns:
        Tasks with ids ``task-<seed>-<index>``
    """
    if num_tasks < 1:
        raise ValueError("num_tasks must be >= 1")
    if corruptions < 1:
        raise ValueError("corruptions must be >= 1")
    rng = np.random.default_rng(seed)
    seen: Set[Tuple[str, str]] = {task_key(t) for t in exclude or []}
    tasks: List[ToyTask] = []
    attempts = 0
    while len(tasks) < num_tasks:
        attempts += 1
        if attempts > 1000 * num_tasks:
            raise ConfigError(f"could not find {num_tasks} distinct tasks of length {length}")
        repair = _random_repair(rng, length)
        initial = _corrupt(rng, repair, corruptions)
        task = ToyTask(
            task_id=f"task-{seed}-{len(tasks):04d}",
            initial_sequence=initial,
            gt_repair=repair,
            semantic_class=canonical(repair),
        )
        if task_key(task) in seen:
            continue
        verify_task(task)
        seen.add(task_key(task))
        tasks.append(task)
    logger.info("generated %d tasks (seed=%d, length=%d)", len(tasks), seed, length)
    return tasks


def task_key(task: ToyTask) -> Tuple[str, str]:
    """Content key used for split disjointness."""
    return "".join(task.initial_sequence), "".join(task.gt_repair)


def write_tasks(path: Union[str, Path], tasks: Iterable[ToyTask]) -> None:
    """Write tasks as JSON lines."""
    write_jsonl(path, (t.to_record() for t in tasks))


def read_tasks(path: Union[str, Path]) -> List[ToyTask]:
    """
    Read a task file.

    Raises:
        ConfigError: If the file does not exist
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"task file {path} does not exist")
    return [ToyTask.from_record(r) for r in read_jsonl(path)]
