"""Agreement and ranking metrics for evaluation results.

All functions are pure and operate on plain sequences, so they can be
checked against brute-force oracles. Percentages are 0-100; everything else
is a fraction unless noted.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Any, Hashable, Iterable, Mapping, Sequence

from .model import EvidenceItem, EvidenceStatus

__all__ = [
    "BinarySeries",
    "InstanceScore",
    "EvalSummary",
    "micro_f1",
    "pcc",
    "cohen_kappa",
    "average_pairwise_kappa",
    "auc",
    "recall_notes",
    "aggregate_instance",
    "note_hits",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BinarySeries:
    """Aligned binary predictions and gold labels with stable ids."""

    ids: tuple[str, ...]
    preds: tuple[int, ...]
    golds: tuple[int, ...]

    def __post_init__(self) -> None:
        if not (len(self.ids) == len(self.preds) == len(self.golds)):
            raise ValueError("ids, preds, and golds must have equal length")
        for value in (*self.preds, *self.golds):
            if value not in (0, 1):
                raise ValueError(f"binary series values must be 0 or 1, got {value!r}")

    @classmethod
    def from_pairs(
        cls,
        pairs: Iterable[tuple[int, int]],
        ids: Sequence[str] | None = None,
    ) -> "BinarySeries":
        pair_list = list(pairs)
        preds = tuple(p for p, _ in pair_list)
        golds = tuple(g for _, g in pair_list)
        if ids is None:
            ids = tuple(str(i) for i in range(len(pair_list)))
        return cls(ids=tuple(ids), preds=preds, golds=golds)

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class InstanceScore:
    """Average per-factor relevance for one (patient, condition) instance."""

    patient_id: str
    condition: str
    score: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"instance score must be in [0, 1], got {self.score}")


def micro_f1(series: BinarySeries) -> float:
    """Positive-class micro F1: 2*TP / (2*TP + FP + FN).

    The vacuous case (no positives in either predictions or gold) is defined
    as 1.0 and flagged, since there was nothing to find and nothing found.
    """
    tp = sum(1 for p, g in zip(series.preds, series.golds) if p == 1 and g == 1)
    fp = sum(1 for p, g in zip(series.preds, series.golds) if p == 1 and g == 0)
    fn = sum(1 for p, g in zip(series.preds, series.golds) if p == 0 and g == 1)
    if tp == 0 and fp == 0 and fn == 0:
        log.warning("micro_f1 on a series with no positive predictions or gold labels; defining as 1.0")
        return 1.0
    return 2 * tp / (2 * tp + fp + fn)


def pcc(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Pearson correlation coefficient over two aligned numeric series."""
    if len(xs) != len(ys):
        raise ValueError(f"series lengths differ: {len(xs)} vs {len(ys)}")
    n = len(xs)
    if n < 2:
        raise ValueError("pcc requires at least two points")
    mean_x = math.fsum(xs) / n
    mean_y = math.fsum(ys) / n
    dx = [x - mean_x for x in xs]
    dy = [y - mean_y for y in ys]
    var_x = math.fsum(d * d for d in dx)
    var_y = math.fsum(d * d for d in dy)
    if var_x == 0.0 or var_y == 0.0:
        raise ValueError("undefined correlation for a constant series")
    cov = math.fsum(a * b for a, b in zip(dx, dy))
    return cov / math.sqrt(var_x * var_y)


def cohen_kappa(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    """Cohen's kappa between two annotators: (p_o - p_e) / (1 - p_e)."""
    if len(a) != len(b):
        raise ValueError(f"annotator series lengths differ: {len(a)} vs {len(b)}")
    n = len(a)
    if n == 0:
        raise ValueError("cohen_kappa requires at least one item")
    p_o = sum(1 for x, y in zip(a, b) if x == y) / n
    counts_a = Counter(a)
    counts_b = Counter(b)
    p_e = math.fsum(
        (counts_a[label] / n) * (counts_b.get(label, 0) / n) for label in counts_a
    )
    if p_e == 1.0:
        raise ValueError("degenerate marginals: both annotators use a single identical label")
    return (p_o - p_e) / (1.0 - p_e)


def average_pairwise_kappa(annotations: Mapping[str, Sequence[Hashable]]) -> float:
    """Mean Cohen's kappa over all unordered annotator pairs."""
    names = sorted(annotations)
    if len(names) < 2:
        raise ValueError("average_pairwise_kappa requires at least two annotators")
    lengths = {len(annotations[name]) for name in names}
    if len(lengths) != 1:
        raise ValueError(f"annotators cover different item counts: {sorted(lengths)}")
    kappas = [
        cohen_kappa(annotations[x], annotations[y])
        for i, x in enumerate(names)
        for y in names[i + 1 :]
    ]
    return math.fsum(kappas) / len(kappas)


def auc(positive_scores: Sequence[float], negative_scores: Sequence[float]) -> float:
    """Area under the ROC curve via the rank-sum (Mann-Whitney) statistic.

    Ties between a positive and a negative score count one half.
    """
    n_pos = len(positive_scores)
    n_neg = len(negative_scores)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc requires at least one positive and one negative score")
    labeled = [(s, 1) for s in positive_scores] + [(s, 0) for s in negative_scores]
    labeled.sort(key=lambda pair: pair[0])
    # Average ranks across tied scores (1-based ranks).
    rank_sum_pos = 0.0
    i = 0
    while i < len(labeled):
        j = i
        while j < len(labeled) and labeled[j][0] == labeled[i][0]:
            j += 1
        avg_rank = (i + 1 + j) / 2.0
        rank_sum_pos += avg_rank * sum(1 for k in range(i, j) if labeled[k][1] == 1)
        i = j
    u_statistic = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u_statistic / (n_pos * n_neg)


def recall_notes(gold_note_ids: Iterable[str], hit_note_ids: Iterable[str]) -> float:
    """Percentage of gold evidence notes that the system touched."""
    gold = set(gold_note_ids)
    if not gold:
        raise ValueError("recall_notes requires a non-empty gold note set")
    hits = set(hit_note_ids)
    return 100.0 * len(gold & hits) / len(gold)


def note_hits(items: Iterable[EvidenceItem]) -> set[str]:
    """Notes counted as retrieved: source notes of active items."""
    return {item.source_note_id for item in items if item.status is EvidenceStatus.ACTIVE}


def aggregate_instance(
    patient_id: str,
    condition: str,
    factor_relevances: Sequence[float],
) -> InstanceScore:
    """Mean per-factor relevance for one instance; zero factors is an error.

    Callers exclude such instances from correlation series with a warning
    rather than inventing a score.
    """
    if not factor_relevances:
        raise ValueError(f"no factors to aggregate for ({patient_id}, {condition})")
    score = math.fsum(factor_relevances) / len(factor_relevances)
    return InstanceScore(patient_id=patient_id, condition=condition, score=score)


@dataclass(frozen=True)
class EvalSummary:
    """One row of an evaluation report table."""

    model_tag: str
    dataset_tag: str
    useful_pct: float
    not_useful_pct: float
    hallucination_pct: float
    micro_f1: float | None = None
    pcc: float | None = None
    kappa: float | None = None
    auc: float | None = None
    recall: float | None = None
    self_evaluation: bool = False

    HEADER = (
        "model_tag",
        "dataset_tag",
        "useful_pct",
        "not_useful_pct",
        "hallucination_pct",
        "micro_f1",
        "pcc",
        "kappa",
        "auc",
        "recall",
        "self_evaluation",
    )

    def to_row(self) -> tuple[str, ...]:
        def fmt(value: Any) -> str:
            if value is None:
                return ""
            if isinstance(value, bool):
                return "true" if value else "false"
            if isinstance(value, float):
                return f"{value:.4f}"
            return str(value)

        return tuple(fmt(getattr(self, name)) for name in self.HEADER)

    def to_dict(self) -> dict[str, Any]:
        return {name: getattr(self, name) for name in self.HEADER}
