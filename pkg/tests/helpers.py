"""Shared builders for tests: notes, corpora, and scripted backends."""

from __future__ import annotations

import json
from datetime import datetime, timedelta, timezone
from typing import Any, Sequence

from evscout.llm import ScriptRule, ScriptedBackend
from evscout.model import Note, NoteCategory

BASE_TS = datetime(2022, 3, 1, 12, 0, 0, tzinfo=timezone.utc)


def make_note(
    note_id: str = "n1",
    patient_id: str = "p1",
    category: NoteCategory = NoteCategory.PHYSICIAN,
    hours: float = 0.0,
    text: str = "Patient resting comfortably.",
) -> Note:
    return Note(
        note_id=note_id,
        patient_id=patient_id,
        category=category,
        timestamp=BASE_TS + timedelta(hours=hours),
        text=text,
    )


def rule(
    pattern: str,
    text: str,
    mode: str = "substring",
    logprobs: Sequence[tuple[str, float]] | None = None,
) -> ScriptRule:
    return ScriptRule(
        mode=mode,
        pattern=pattern,
        text=text,
        token_logprobs=tuple(logprobs) if logprobs else None,
    )


def scripted(*rules: ScriptRule, **kwargs: Any) -> ScriptedBackend:
    return ScriptedBackend(list(rules), **kwargs)


def corpus_record(record_type: str, **fields: Any) -> str:
    row = {"record_type": record_type}
    row.update(fields)
    return json.dumps(row, ensure_ascii=False)


def note_record(
    note_id: str,
    patient_id: str,
    category: str = "physician",
    hours: float = 0.0,
    text: str = "Patient resting comfortably.",
) -> str:
    ts = (BASE_TS + timedelta(hours=hours)).isoformat()
    return corpus_record(
        "note", patient_id=patient_id, id=note_id, category=category, timestamp=ts, text=text
    )


def imaging_record(event_id: str, patient_id: str, modality: str = "ct brain", hours: float = 1.0) -> str:
    ts = (BASE_TS + timedelta(hours=hours)).isoformat()
    return corpus_record("imaging", patient_id=patient_id, id=event_id, modality=modality, timestamp=ts)


def visit_record(visit_id: str, patient_id: str, department: str = "ER", hours: float = 0.0) -> str:
    ts = (BASE_TS + timedelta(hours=hours)).isoformat()
    return corpus_record("visit", patient_id=patient_id, id=visit_id, department=department, timestamp=ts)


def write_corpus(path, lines: Sequence[str]) -> None:
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
