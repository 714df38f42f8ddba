from __future__ import annotations

import pytest

from evscout.auto_eval import EvalVerdict, Factor, FactorKind, LabelMapping
from evscout.model import (
    EvidenceItem,
    EvidenceSource,
    QueryKind,
    Relevance,
    RelevanceLabel,
)
from evscout.report import (
    build_agreement,
    build_summary,
    confidence_split,
    instance_score_pair,
    render_confidence_figure,
    render_outcome_figure,
    verdict_outcomes,
    write_summaries,
)


def _verdict(evidence_id, present_valid=(), present_invalid=(), absent=(), unevaluable=False):
    factors = []
    for text in present_valid:
        factors.append(
            Factor(text=text, kind=FactorKind.RISK, present_in_note=True, valid_for_diagnosis=True)
        )
    for text in present_invalid:
        factors.append(
            Factor(text=text, kind=FactorKind.RISK, present_in_note=True, valid_for_diagnosis=False)
        )
    for text in absent:
        factors.append(Factor(text=text, kind=FactorKind.RISK, present_in_note=False))
    present = len(present_valid) + len(present_invalid)
    return EvalVerdict(
        evidence_id=evidence_id,
        factors=tuple(factors),
        hallucinated=bool(factors) and present == 0 and not unevaluable,
        relevance_fraction=(len(present_valid) / present) if present else None,
        unevaluable=unevaluable,
    )


def test_verdict_outcomes_percentages():
    verdicts = [
        _verdict("e1", present_valid=["a"]),                       # useful
        _verdict("e2", present_invalid=["b"]),                     # present but irrelevant
        _verdict("e3", absent=["c"]),                              # hallucinated
        _verdict("e4", present_valid=["d"], present_invalid=["e"]),  # useful
        _verdict("e5", unevaluable=True),                          # excluded entirely
    ]
    useful, not_useful, hallucinated = verdict_outcomes(verdicts)
    assert useful == pytest.approx(50.0)
    assert not_useful == pytest.approx(25.0)
    assert hallucinated == pytest.approx(25.0)
    assert useful + not_useful + hallucinated == pytest.approx(100.0)
    assert verdict_outcomes([]) == (0.0, 0.0, 0.0)
    assert verdict_outcomes([_verdict("e1", unevaluable=True)]) == (0.0, 0.0, 0.0)


def _label(value=Relevance.USEFUL, present=True):
    return RelevanceLabel(value=value, present_in_note=present)


def test_build_agreement_series():
    verdicts = [
        _verdict("e1", present_valid=["a"]),     # judge: relevant, present
        _verdict("e2", present_invalid=["b"]),   # judge: present, irrelevant
        _verdict("e3", absent=["c"]),            # judge: hallucination
        _verdict("e4", present_valid=["d"]),     # no expert label -> skipped
        _verdict("e5", unevaluable=True),        # unevaluable -> skipped
    ]
    labels = {
        "e1": _label(Relevance.USEFUL),
        "e2": _label(Relevance.NOT_USEFUL),
        "e3": _label(Relevance.USEFUL),                  # expert graded what judge called fabricated
        "e5": _label(Relevance.USEFUL),
    }
    got = build_agreement(verdicts, labels)
    assert got.presence.ids == ("e1", "e2", "e3")
    assert got.presence.preds == (1, 1, 0)
    assert got.presence.golds == (1, 1, 1)
    assert got.relevance.ids == ("e1", "e2", "e3")
    assert got.relevance.preds == (1, 0, 0)  # judge hallucination predicts 0
    assert got.relevance.golds == (1, 0, 1)


def test_build_agreement_expert_hallucination_drops_relevance_row():
    verdicts = [_verdict("e1", present_valid=["a"])]
    labels = {"e1": _label(present=False)}
    got = build_agreement(verdicts, labels)
    assert got.presence.ids == ("e1",)
    assert got.presence.preds == (1,)
    assert got.presence.golds == (0,)
    assert got.relevance.ids == ()  # no gold relevance for a hallucination


def test_build_agreement_strict_mapping_changes_gold():
    verdicts = [_verdict("e1", present_valid=["a"])]
    labels = {"e1": _label(Relevance.WEAK_CORRELATION)}
    lenient = build_agreement(verdicts, labels)
    strict = build_agreement(verdicts, labels, LabelMapping(strict=True))
    assert lenient.relevance.golds == (1,)
    assert strict.relevance.golds == (0,)


def test_instance_score_pair_averages_both_sides():
    verdicts = [
        _verdict("e1", present_valid=["a"], present_invalid=["b"]),  # 1/2 factors valid
        _verdict("e2", present_valid=["c"]),                         # 1/1
        _verdict("e3", absent=["d"]),                                # contributes nothing
    ]
    labels = {
        "e1": _label(Relevance.USEFUL),       # 1
        "e2": _label(Relevance.NOT_USEFUL),   # 0
        "e3": _label(present=False),          # None, dropped
    }
    pred, gold = instance_score_pair("p1", "stroke", verdicts, labels)
    assert pred.score == pytest.approx(2 / 3)  # (1 + 0 + 1) / 3 present factors
    assert gold.score == pytest.approx(0.5)
    assert pred.patient_id == "p1"


def test_instance_score_pair_handles_empty_sides(caplog):
    with caplog.at_level("WARNING"):
        pred, gold = instance_score_pair("p1", "stroke", [_verdict("e1", absent=["x"])], {})
    assert pred is None
    assert gold is None
    assert any("no present factors" in r.getMessage() for r in caplog.records)


def _item(evidence_id, confidence):
    return EvidenceItem(
        id=evidence_id,
        patient_id="p1",
        condition="stroke",
        kind=QueryKind.RISK,
        source=EvidenceSource.GENERATED,
        text=f"text {evidence_id}",
        source_note_id="n1",
        confidence=confidence,
    )


def test_confidence_split():
    items = [
        _item("e1", 0.9),
        _item("e2", 0.3),
        _item("e3", None),   # no confidence -> skipped
        _item("e4", 0.5),    # no verdict -> skipped
        _item("e5", 0.7),    # unevaluable -> skipped
    ]
    verdicts = [
        _verdict("e1", present_valid=["a"]),
        _verdict("e2", absent=["b"]),
        _verdict("e3", present_valid=["c"]),
        _verdict("e5", unevaluable=True),
    ]
    grounded, hallucinated = confidence_split(items, verdicts)
    assert grounded == [0.9]
    assert hallucinated == [0.3]


def test_build_summary_and_write_table(tmp_path):
    verdicts = [_verdict("e1", present_valid=["a"]), _verdict("e2", absent=["b"])]
    summary = build_summary("sequential", "p1:stroke", verdicts, micro_f1=0.9)
    assert summary.useful_pct == pytest.approx(50.0)
    assert summary.hallucination_pct == pytest.approx(50.0)

    path = tmp_path / "report" / "report.tsv"
    write_summaries([summary], path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].split("\t")[:3] == ["model_tag", "dataset_tag", "useful_pct"]
    cells = lines[1].split("\t")
    assert cells[0] == "sequential"
    assert cells[1] == "p1:stroke"
    assert cells[2] == "50.0000"
    assert len(lines) == 2


def test_render_figures_write_png_files(tmp_path):
    summaries = [
        build_summary("sequential", "p1:stroke", [_verdict("e1", present_valid=["a"])]),
        build_summary("baseline", "p1:stroke", [_verdict("e2", absent=["b"])]),
    ]
    outcome_path = tmp_path / "outcomes.png"
    render_outcome_figure(summaries, outcome_path)
    assert outcome_path.exists() and outcome_path.stat().st_size > 1000

    confidence_path = tmp_path / "confidence.png"
    render_confidence_figure([0.9, 0.8, 0.7], [0.2, 0.1], confidence_path, auc_value=0.97)
    assert confidence_path.exists() and confidence_path.stat().st_size > 1000

    empty_path = tmp_path / "empty.png"
    render_confidence_figure([], [], empty_path)
    assert empty_path.exists()
