"""
Group-relative policy optimisation with reshaped signals under weak feedback.
"""

from .config import Settings
from .core.policy import PolicyParams
from .models.run import RunConfig
from .runner import ExperimentRunner

__version__ = "0.1.0"
__all__ = ["ExperimentRunner", "PolicyParams", "RunConfig", "Settings"]
