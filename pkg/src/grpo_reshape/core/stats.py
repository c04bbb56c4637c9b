"""
Judge-reliability and paired-comparison statistics for the audit.
"""
import csv
import math
from pathlib import Path
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import gammaincc

from ..config import AUDIT_JUDGE
from ..exceptions import UndefinedStatisticError
from ..models.audit import AuditReport, AuditTable

Label = Tuple[bool, bool]

_LABEL_VALUES = {
    "consistent": True,
    "inconsistent": False,
    "1": True,
    "0": False,
    "true": True,
    "false": False,
    "yes": True,
    "no": False,
}


class ConfusionMetrics(NamedTuple):
    """Agreement and consistent-class metrics of an audit table."""
    agreement: float
    precision: float
    recall: float
    f1: float


def _ratio(num: float, den: float, name: str) -> float:
    if den <= 0:
        raise UndefinedStatisticError(f"{name} is undefined: zero denominator")
    return num / den


def confusion_metrics(table: AuditTable) -> ConfusionMetrics:
    """
    Agreement, precision, recall and F1 on the consistent class.

    Raises:
        UndefinedStatisticError: If the table is empty or a denominator is zero
    """
    agreement = _ratio(table.tp + table.tn, table.total, "agreement")
    precision = _ratio(table.tp, table.tp + table.fp, "precision")
    recall = _ratio(table.tp, table.tp + table.fn, "recall")
    f1 = _ratio(2 * precision * recall, precision + recall, "F1")
    return ConfusionMetrics(agreement, precision, recall, f1)


def cohen_kappa(table: AuditTable) -> float:
    """
    Cohen's kappa with marginal-product chance agreement.

    A table whose chance agreement is 1 (both raters constant and equal)
    has kappa 1.
    """
    n = table.total
    if n <= 0:
        raise UndefinedStatisticError("kappa is undefined on an empty table")
    p_o = (table.tp + table.tn) / n
    judge_pos = (table.tp + table.fp) / n
    human_pos = (table.tp + table.fn) / n
    p_e = judge_pos * human_pos + (1 - judge_pos) * (1 - human_pos)
    if math.isclose(p_e, 1.0):
        return 1.0
    return (p_o - p_e) / (1 - p_e)


def wilson_ci(
    successes: int,
    n: int,
    z: float = 1.96,
    continuity: bool = False,
) -> Tuple[float, float]:
    """
    Wilson score interval for a binomial proportion.

    Args:
        successes: Observed successes
        n: Trials
        z: Normal quantile
        continuity: Apply the continuity-corrected form

    Returns:
        (lo, hi), clamped to [0, 1]
    """
    if n <= 0:
        raise UndefinedStatisticError("a proportion needs at least one trial")
    if not 0 <= successes <= n:
        raise ValueError("successes must lie in [0, n]")
    p = successes / n
    z2 = z * z
    if not continuity:
        center = (p + z2 / (2 * n)) / (1 + z2 / n)
        half = z / (1 + z2 / n) * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n))
        lo = 0.0 if successes == 0 else max(0.0, center - half)
        hi = 1.0 if successes == n else min(1.0, center + half)
        return lo, hi

    denom = 2 * (n + z2)
    lo = 0.0
    if successes > 0:
        root = math.sqrt(z2 - 2 - 1 / n + 4 * p * (n * (1 - p) + 1))
        lo = max(0.0, (2 * n * p + z2 - 1 - z * root) / denom)
    hi = 1.0
    if successes < n:
        root = math.sqrt(z2 + 2 - 1 / n + 4 * p * (n * (1 - p) - 1))
        hi = min(1.0, (2 * n * p + z2 + 1 + z * root) / denom)
    return lo, hi


def mcnemar(b: int, c: int) -> Tuple[float, float]:
    """
    McNemar test without continuity correction.

    Args:
        b: Pairs where only the first system succeeds
        c: Pairs where only the second system succeeds

    Returns:
        (chi2, p) with p from the one-degree-of-freedom chi-square tail

    Raises:
        UndefinedStatisticError: If there are no discordant pairs
    """
    if b < 0 or c < 0:
        raise ValueError("discordant counts must be >= 0")
    if b + c == 0:
        raise UndefinedStatisticError("McNemar is undefined without discordant pairs")
    chi2 = (b - c) ** 2 / (b + c)
    return chi2, float(gammaincc(0.5, chi2 / 2.0))


def rogan_gladen(
    p_obs: float,
    sensitivity: float = AUDIT_JUDGE["sensitivity"],
    specificity: float = AUDIT_JUDGE["specificity"],
) -> float:
    """
    Correct an observed rate for judge error, clamped to [0, 1].

    Raises:
        UndefinedStatisticError: If sensitivity + specificity <= 1
    """
    if sensitivity + specificity <= 1:
        raise UndefinedStatisticError("correction needs sensitivity + specificity > 1")
    p_true = (p_obs - (1 - specificity)) / (sensitivity + specificity - 1)
    return min(1.0, max(0.0, p_true))


def table_from_labels(labels: Sequence[Label]) -> AuditTable:
    """Confusion counts from (judge, human) label pairs."""
    counts = {"tp": 0, "fp": 0, "fn": 0, "tn": 0}
    for judge, human in labels:
        if judge:
            counts["tp" if human else "fp"] += 1
        else:
            counts["fn" if human else "tn"] += 1
    return AuditTable(**counts)


def bootstrap_kappa_ci(
    labels: Sequence[Label],
    resamples: int = 10_000,
    rng: Union[int, np.random.Generator] = 0,
    level: float = 0.95,
) -> Tuple[float, float]:
    """
    Percentile bootstrap interval for Cohen's kappa.

    Args:
        labels: (judge, human) label pairs
        resamples: Bootstrap resamples
        rng: Seed or generator
        level: Interval coverage

    Returns:
        (lo, hi)
    """
    if not labels:
        raise UndefinedStatisticError("bootstrap needs at least one label pair")
    rng = np.random.default_rng(rng)
    pairs = np.asarray(labels, dtype=bool)
    n = len(pairs)
    idx = rng.integers(0, n, size=(resamples, n))
    judge = pairs[idx, 0]
    human = pairs[idx, 1]
    p_o = (judge == human).mean(axis=1)
    pj = judge.mean(axis=1)
    ph = human.mean(axis=1)
    p_e = pj * ph + (1 - pj) * (1 - ph)
    chance_free = np.isclose(p_e, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        kappas = np.where(chance_free, 1.0, (p_o - p_e) / np.where(chance_free, 1.0, 1 - p_e))
    tail = (1 - level) / 2 * 100
    lo, hi = np.percentile(kappas, [tail, 100 - tail])
    return float(lo), float(hi)


def read_audit_labels(path: Union[str, Path]) -> List[Label]:
    """
    Read (judge_label, human_label) pairs from a delimited file.

    Comma, tab, semicolon and pipe delimiters are recognised; an optional
    header row is skipped. Labels may be consistent/inconsistent, 1/0,
    true/false or yes/no.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        dialect = csv.Sniffer().sniff(text[:2048], delimiters=",\t;|")
    except csv.Error:
        dialect = csv.excel
    labels: List[Label] = []
    for lineno, row in enumerate(csv.reader(text.splitlines(), dialect), start=1):
        cells = [c.strip().lower() for c in row if c.strip()]
        if not cells:
            continue
        if len(cells) < 2:
            raise ValueError(f"{path}:{lineno}: expected judge and human labels")
        judge, human = cells[0], cells[1]
        if judge not in _LABEL_VALUES or human not in _LABEL_VALUES:
            if lineno == 1:
                continue
            raise ValueError(f"{path}:{lineno}: unknown label in {row!r}")
        labels.append((_LABEL_VALUES[judge], _LABEL_VALUES[human]))
    return labels


def audit_report(
    table: Optional[AuditTable] = None,
    labels: Optional[Sequence[Label]] = None,
    discordant: Optional[Tuple[int, int]] = None,
    observed_rates: Optional[Mapping[str, float]] = None,
    sensitivity: float = AUDIT_JUDGE["sensitivity"],
    specificity: float = AUDIT_JUDGE["specificity"],
    z: float = 1.96,
    resamples: int = 10_000,
    seed: int = 0,
) -> AuditReport:
    """
    Compute every audit statistic in one call.

    Args:
        table: Pooled confusion counts (derived from ``labels`` when omitted)
        labels: Raw label pairs; enables the bootstrap kappa interval
        discordant: (b, c) discordant counts of a paired system comparison
        observed_rates: Named observed pass rates to correct for judge error
        sensitivity: Judge sensitivity used by the correction
        specificity: Judge specificity used by the correction
        z: Normal quantile of the Wilson interval
        resamples: Bootstrap resamples
        seed: Bootstrap seed

    Returns:
        AuditReport
    """
    if table is None:
        if labels is None:
            raise ValueError("either a table or labels are required")
        table = table_from_labels(labels)
    metrics = confusion_metrics(table)
    corrected: Dict[str, float] = {
        name: rogan_gladen(rate, sensitivity, specificity)
        for name, rate in sorted((observed_rates or {}).items())
    }
    chi2 = p = None
    if discordant is not None:
        chi2, p = mcnemar(*discordant)
    return AuditReport(
        table=table,
        agreement=metrics.agreement,
        agreement_ci=wilson_ci(table.tp + table.tn, table.total, z),
        precision=metrics.precision,
        recall=metrics.recall,
        f1=metrics.f1,
        kappa=cohen_kappa(table),
        kappa_ci=bootstrap_kappa_ci(labels, resamples, seed) if labels else None,
        mcnemar_chi2=chi2,
        mcnemar_p=p,
        corrected_rates=corrected,
    )
