"""Report assembly: outcome tallies, agreement with expert labels, figures.

The delimited summary table is the primary artifact; the figures (outcome
bars per run, confidence histograms split by hallucination verdict) are
rendered next to it from the same data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .auto_eval import EvalVerdict, LabelMapping, map_expert_label
from .metrics import BinarySeries, EvalSummary, InstanceScore, aggregate_instance
from .model import EvidenceItem, RelevanceLabel

__all__ = [
    "AgreementSeries",
    "verdict_outcomes",
    "build_agreement",
    "instance_score_pair",
    "confidence_split",
    "build_summary",
    "write_summaries",
    "render_outcome_figure",
    "render_confidence_figure",
]

log = logging.getLogger(__name__)


def verdict_outcomes(verdicts: Sequence[EvalVerdict]) -> tuple[float, float, float]:
    """Percent (useful, not useful, hallucinated) over evaluable verdicts.

    An item counts as useful when at least one of its present factors was
    judged relevant to the diagnosis.
    """
    evaluable = [v for v in verdicts if not v.unevaluable]
    if not evaluable:
        return (0.0, 0.0, 0.0)
    n = len(evaluable)
    hallucinated = sum(1 for v in evaluable if v.hallucinated)
    useful = sum(
        1
        for v in evaluable
        if not v.hallucinated and v.relevance_fraction is not None and v.relevance_fraction > 0
    )
    not_useful = n - hallucinated - useful
    return (100.0 * useful / n, 100.0 * not_useful / n, 100.0 * hallucinated / n)


@dataclass(frozen=True)
class AgreementSeries:
    """Binary agreement series between the judge and one expert's labels."""

    # Relevance agreement over items both sides accept as present in the note.
    relevance: BinarySeries
    # Presence agreement over all shared items (hallucination detection).
    presence: BinarySeries


def build_agreement(
    verdicts: Sequence[EvalVerdict],
    labels: Mapping[str, RelevanceLabel],
    mapping: LabelMapping | None = None,
) -> AgreementSeries:
    """Align verdicts with expert labels by evidence id.

    Items without an expert label or without an evaluable verdict are
    skipped. In the relevance series the judge's binary score is "any
    present factor validated"; a judge-side hallucination scores 0 when the
    expert still graded the evidence.
    """
    mapping = mapping or LabelMapping()
    rel_ids: list[str] = []
    rel_pairs: list[tuple[int, int]] = []
    pres_ids: list[str] = []
    pres_pairs: list[tuple[int, int]] = []
    for verdict in verdicts:
        if verdict.unevaluable:
            continue
        label = labels.get(verdict.evidence_id)
        if label is None:
            continue
        pres_ids.append(verdict.evidence_id)
        pres_pairs.append(
            (0 if verdict.hallucinated else 1, 1 if label.present_in_note else 0)
        )
        gold = map_expert_label(label, mapping)
        if gold is None:
            continue
        if verdict.hallucinated or verdict.relevance_fraction is None:
            pred = 0
        else:
            pred = 1 if verdict.relevance_fraction > 0 else 0
        rel_ids.append(verdict.evidence_id)
        rel_pairs.append((pred, gold))
    return AgreementSeries(
        relevance=BinarySeries.from_pairs(rel_pairs, ids=rel_ids),
        presence=BinarySeries.from_pairs(pres_pairs, ids=pres_ids),
    )


def instance_score_pair(
    patient_id: str,
    condition: str,
    verdicts: Sequence[EvalVerdict],
    labels: Mapping[str, RelevanceLabel],
    mapping: LabelMapping | None = None,
) -> tuple[InstanceScore | None, InstanceScore | None]:
    """Judge-side and expert-side instance scores for one (patient, condition).

    The judge side averages per-factor relevance over all present factors;
    the expert side averages mapped binary labels over graded items. Either
    side can be None when it has nothing to average, and callers must then
    drop the instance from correlation series.
    """
    mapping = mapping or LabelMapping()
    factor_values: list[float] = []
    for verdict in verdicts:
        if verdict.unevaluable:
            continue
        for factor in verdict.factors:
            if factor.present_in_note:
                factor_values.append(1.0 if factor.valid_for_diagnosis else 0.0)
    gold_values: list[float] = []
    for verdict in verdicts:
        label = labels.get(verdict.evidence_id)
        if label is None:
            continue
        gold = map_expert_label(label, mapping)
        if gold is not None:
            gold_values.append(float(gold))
    try:
        pred = aggregate_instance(patient_id, condition, factor_values)
    except ValueError:
        log.warning("instance (%s, %s) has no present factors; excluded", patient_id, condition)
        pred = None
    try:
        gold_score = aggregate_instance(patient_id, condition, gold_values)
    except ValueError:
        gold_score = None
    return pred, gold_score


def confidence_split(
    items: Iterable[EvidenceItem],
    verdicts: Sequence[EvalVerdict],
) -> tuple[list[float], list[float]]:
    """Item confidences split into (grounded, hallucinated) by verdict."""
    verdict_by_id = {v.evidence_id: v for v in verdicts}
    present: list[float] = []
    hallucinated: list[float] = []
    for item in items:
        verdict = verdict_by_id.get(item.id)
        if verdict is None or verdict.unevaluable or item.confidence is None:
            continue
        (hallucinated if verdict.hallucinated else present).append(item.confidence)
    return present, hallucinated


def build_summary(
    model_tag: str,
    dataset_tag: str,
    verdicts: Sequence[EvalVerdict],
    micro_f1: float | None = None,
    pcc: float | None = None,
    kappa: float | None = None,
    auc: float | None = None,
    recall: float | None = None,
    self_evaluation: bool = False,
) -> EvalSummary:
    useful, not_useful, hallucination = verdict_outcomes(verdicts)
    return EvalSummary(
        model_tag=model_tag,
        dataset_tag=dataset_tag,
        useful_pct=useful,
        not_useful_pct=not_useful,
        hallucination_pct=hallucination,
        micro_f1=micro_f1,
        pcc=pcc,
        kappa=kappa,
        auc=auc,
        recall=recall,
        self_evaluation=self_evaluation,
    )


def write_summaries(summaries: Sequence[EvalSummary], path: str | Path) -> None:
    """Write the report table as tab-delimited text with a header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(EvalSummary.HEADER)]
    lines.extend("\t".join(summary.to_row()) for summary in summaries)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def render_outcome_figure(summaries: Sequence[EvalSummary], path: str | Path) -> None:
    """Grouped bars of useful / not useful / hallucinated percentages per run."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tags = [f"{s.model_tag}\n{s.dataset_tag}" for s in summaries]
    groups = {
        "Useful": [s.useful_pct for s in summaries],
        "Not useful": [s.not_useful_pct for s in summaries],
        "Hallucinated": [s.hallucination_pct for s in summaries],
    }
    fig, ax = plt.subplots(figsize=(max(6.0, 1.8 * len(summaries)), 4.0))
    width = 0.25
    for offset, (name, values) in enumerate(groups.items()):
        positions = [i + (offset - 1) * width for i in range(len(summaries))]
        ax.bar(positions, values, width=width, label=name)
    ax.set_xticks(range(len(summaries)))
    ax.set_xticklabels(tags, fontsize=8)
    ax.set_ylabel("% of evidence items")
    ax.set_ylim(0, 100)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_confidence_figure(
    present_scores: Sequence[float],
    hallucinated_scores: Sequence[float],
    path: str | Path,
    auc_value: float | None = None,
) -> None:
    """Overlaid confidence histograms for grounded vs hallucinated items."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    bins = [i / 20.0 for i in range(21)]
    if present_scores:
        ax.hist(present_scores, bins=bins, alpha=0.6, label="grounded", color="tab:blue")
    if hallucinated_scores:
        ax.hist(hallucinated_scores, bins=bins, alpha=0.6, label="hallucinated", color="tab:red")
    ax.set_xlabel("sequence confidence")
    ax.set_ylabel("evidence items")
    title = "Confidence by grounding verdict"
    if auc_value is not None:
        title += f" (AUC {auc_value:.3f})"
    ax.set_title(title)
    if present_scores or hallucinated_scores:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
