"""
Models for judge-reliability audits.
"""
from typing import Dict, Optional, Tuple

from pydantic import Field, validator

from .base import ReshapeModel


class AuditTable(ReshapeModel):
    """
    Judge-versus-human confusion counts on the consistent class.

    Attributes:
        tp: Judge consistent, human consistent
        fp: Judge consistent, human inconsistent
        fn: Judge inconsistent, human consistent
        tn: Judge inconsistent, human inconsistent
    """
    tp: int
    fp: int
    fn: int
    tn: int

    @validator("tp", "fp", "fn", "tn")
    def validate_count(cls, v):
        """Counts are non-negative."""
        if v < 0:
            raise ValueError("counts must be >= 0")
        return v

    @property
    def total(self) -> int:
        """Number of audited items."""
        return self.tp + self.fp + self.fn + self.tn


class AuditReport(ReshapeModel):
    """
    Everything the audit command prints.

    Attributes:
        table: Pooled confusion counts
        agreement: Judge-human agreement
        agreement_ci: Wilson interval of the agreement
        precision: Precision on the consistent class
        recall: Recall on the consistent class
        f1: F1 on the consistent class
        kappa: Cohen's kappa
        kappa_ci: Bootstrap percentile interval of kappa, when labels were given
        mcnemar_chi2: McNemar statistic of the paired comparison, when given
        mcnemar_p: Its p-value
        corrected_rates: Rogan-Gladen corrected rate per observed rate
    """
    table: AuditTable
    agreement: float
    agreement_ci: Tuple[float, float]
    precision: float
    recall: float
    f1: float
    kappa: float
    kappa_ci: Optional[Tuple[float, float]] = None
    mcnemar_chi2: Optional[float] = None
    mcnemar_p: Optional[float] = None
    corrected_rates: Dict[str, float] = Field(default_factory=dict)
