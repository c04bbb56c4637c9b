"""
Tabular categorical policy: one logit row per context key.
"""
import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from pydantic import Field, validator
from scipy.special import log_softmax

from ..models.base import ReshapeModel

HINT_PREFIX = "hint|"


def slot_of(key: str) -> str:
    """Slot name of a context key (``kind``, ``loc``, ``sym``), hint prefix ignored."""
    if key.startswith(HINT_PREFIX):
        key = key[len(HINT_PREFIX):]
    return key.split("|", 1)[0]


class PolicyParams(ReshapeModel):
    """
    Context-keyed categorical logits.

    Rows are created lazily at zero (uniform) the first time a context is
    seen, sized by the slot the key belongs to.

    Attributes:
        logits: Context key to logit vector
        slot_sizes: Vocabulary size of each slot
    """
    logits: Dict[str, Any] = Field(default_factory=dict)
    slot_sizes: Dict[str, int] = Field(default_factory=dict)

    class Config:
        arbitrary_types_allowed = True

    @validator("logits", pre=True)
    def validate_logits(cls, v):
        """Store rows as finite float vectors."""
        rows = {}
        for key, row in dict(v).items():
            arr = np.array(row, dtype=float)
            if arr.ndim != 1 or arr.size == 0:
                raise ValueError(f"row {key!r} must be a non-empty vector")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"row {key!r} has non-finite logits")
            rows[key] = arr
        return rows

    def row(self, key: str) -> np.ndarray:
        """Logit row of a context, created at zero when unseen."""
        if key not in self.logits:
            slot = slot_of(key)
            if slot not in self.slot_sizes:
                raise KeyError(f"unknown context {key!r} and no size for slot {slot!r}")
            self.logits[key] = np.zeros(self.slot_sizes[slot])
        return self.logits[key]

    def log_probs(self, key: str, temperature: float = 1.0) -> np.ndarray:
        """Log-softmax of a row at the given temperature."""
        return log_softmax(self.row(key) / temperature)

    def probs(self, key: str, temperature: float = 1.0) -> np.ndarray:
        """Softmax of a row at the given temperature."""
        return np.exp(self.log_probs(key, temperature))

    def logp(self, key: str, token_id: int, temperature: float = 1.0) -> float:
        """Log-probability of one token under a context."""
        return float(self.log_probs(key, temperature)[token_id])

    def entropy(self, key: str) -> float:
        """Entropy (nats) of a row."""
        logp = self.log_probs(key)
        return float(-np.sum(np.exp(logp) * logp))

    def snapshot(self) -> "PolicyParams":
        """Deep copy of the parameter table."""
        return PolicyParams(
            logits={k: v.copy() for k, v in self.logits.items()},
            slot_sizes=dict(self.slot_sizes),
        )

    def apply_gradient(self, grad: Dict[str, np.ndarray], lr: float) -> None:
        """Descend the loss: logits -= lr * grad."""
        for key, g in grad.items():
            self.logits[key] = self.row(key) - lr * g

    def to_record(self) -> Dict[str, Any]:
        """JSON-compatible view with rows as lists, keys sorted."""
        return {
            "logits": {k: self.logits[k].tolist() for k in sorted(self.logits)},
            "slot_sizes": dict(sorted(self.slot_sizes.items())),
        }

    def save(self, path: Union[str, Path]) -> None:
        """Write the table as JSON."""
        Path(path).write_text(json.dumps(self.to_record(), sort_keys=True))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PolicyParams":
        """Read a table written by ``save``."""
        return cls.from_record(json.loads(Path(path).read_text()))


def grad_norm(grad: Optional[Dict[str, np.ndarray]]) -> float:
    """Euclidean norm over all gradient rows."""
    if not grad:
        return 0.0
    return float(np.sqrt(sum(float(np.dot(g, g)) for g in grad.values())))
