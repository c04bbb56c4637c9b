"""
Base model for grpo-reshape records.
"""
import json
from typing import Any, Dict, Type, TypeVar

from pydantic import BaseModel

M = TypeVar("M", bound="ReshapeModel")


class ReshapeModel(BaseModel):
    """
    Base model for all serialisable records.

    Records are written as one JSON object per line with sorted keys, so two
    equal records always produce identical bytes.
    """

    class Config:
        allow_population_by_field_name = True
        use_enum_values = False
        extra = "forbid"

    def to_record(self) -> Dict[str, Any]:
        """
        Convert the model to a plain JSON-compatible dictionary.

        Returns:
            Dictionary with enum members replaced by their values
        """
        return json.loads(self.json())

    def to_line(self) -> str:
        """Serialise to one JSON line with sorted keys."""
        return json.dumps(self.to_record(), sort_keys=True)

    @classmethod
    def from_record(cls: Type[M], data: Dict[str, Any]) -> M:
        """
        Create a validated model instance from a stored record.

        Args:
            data: Dictionary produced by ``to_record``

        Returns:
            An instance of the model
        """
        return cls.parse_obj(data)
