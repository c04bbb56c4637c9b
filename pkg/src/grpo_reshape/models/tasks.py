"""
Models for the synthetic repair tasks.
"""
from typing import List

from pydantic import validator

from .base import ReshapeModel

ALPHABET = ["(", ")", "[", "]", "a", "b"]
OPENERS = {"(": ")", "[": "]"}
CLOSERS = {")": "(", "]": "["}
FILLERS = ["a", "b"]


class ToyTask(ReshapeModel):
    """
    One weak-feedback repair task.

    Attributes:
        task_id: Stable identifier (the prompt id)
        initial_sequence: Broken sequence the agent starts from
        gt_repair: Reference repair, hidden from the hint-free policy
        surface_rule: Identifier of the necessary-condition check
        semantic_class: Canonical form shared by every semantically correct repair
    """
    task_id: str
    initial_sequence: List[str]
    gt_repair: List[str]
    surface_rule: str = "balanced_delimiters"
    semantic_class: str

    @validator("initial_sequence", "gt_repair", each_item=True)
    def validate_symbol(cls, v):
        """Sequences use the six-symbol alphabet."""
        if v not in ALPHABET:
            raise ValueError(f"symbol {v!r} is not in the alphabet")
        return v

    @validator("gt_repair")
    def validate_length(cls, v, values):
        """The repair keeps the sequence length."""
        initial = values.get("initial_sequence")
        if initial is not None and len(initial) != len(v):
            raise ValueError("gt_repair must have the initial sequence's length")
        return v

    @property
    def length(self) -> int:
        """Sequence length."""
        return len(self.initial_sequence)
