"""Shared domain types: notes, queries, evidence items, labels, and run records."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from functools import cached_property
from typing import Any, Iterable, Mapping, Sequence

__all__ = [
    "NoteCategory",
    "QueryKind",
    "EvidenceSource",
    "EvidenceStatus",
    "Relevance",
    "Sentence",
    "Note",
    "DiagnosisQuery",
    "Highlight",
    "EvidenceItem",
    "RelevanceLabel",
    "StepLog",
    "RunRecord",
    "ValidationReport",
    "validate_corpus",
    "canonical_json",
    "evidence_id",
    "normalize_ws",
    "parse_timestamp",
]


def normalize_ws(text: str) -> str:
    """Collapse runs of whitespace to single spaces and strip the ends.

    This is the comparison form used everywhere two pieces of text must be
    treated as "the same" (dedupe keys, extractivity checks).
    """
    return " ".join(text.split())


def canonical_json(obj: Any) -> bytes:
    """Stable byte encoding used for digests and byte-equality checks."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def parse_timestamp(raw: str) -> datetime:
    """Parse an RFC 3339 timestamp and normalize it to UTC."""
    text = raw.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _format_timestamp(ts: datetime | None) -> str | None:
    return None if ts is None else ts.astimezone(timezone.utc).isoformat()


class NoteCategory(str, Enum):
    DISCHARGE_SUMMARY = "discharge_summary"
    RADIOLOGY = "radiology"
    PATHOLOGY = "pathology"
    CARDIOLOGY = "cardiology"
    ENDOSCOPY = "endoscopy"
    OPERATIVE = "operative"
    PULMONARY = "pulmonary"
    NURSING = "nursing"
    PHYSICIAN = "physician"
    ECG = "ecg"
    OTHER = "other"


class QueryKind(str, Enum):
    RISK = "risk"
    HAS = "has"


class EvidenceSource(str, Enum):
    GENERATED = "generated"
    EXTRACTED_BASELINE = "extracted_baseline"


class EvidenceStatus(str, Enum):
    ACTIVE = "active"
    ABSTAINED = "abstained"


class Relevance(str, Enum):
    """Five-point usefulness scale used by expert annotators."""

    NOT_USEFUL = "not_useful"
    WEAK_CORRELATION = "weak_correlation"
    PARTIALLY_USEFUL = "partially_useful"
    USEFUL = "useful"
    VERY_USEFUL = "very_useful"


@dataclass(frozen=True)
class Sentence:
    """One sentence of a note, with its character span in the original text."""

    note_id: str
    index: int
    text: str
    start: int
    end: int

    @property
    def char_span(self) -> tuple[int, int]:
        return (self.start, self.end)

    def to_dict(self) -> dict[str, Any]:
        return {
            "note_id": self.note_id,
            "index": self.index,
            "text": self.text,
            "start": self.start,
            "end": self.end,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Sentence":
        return cls(
            note_id=d["note_id"],
            index=int(d["index"]),
            text=d["text"],
            start=int(d["start"]),
            end=int(d["end"]),
        )


@dataclass(frozen=True, eq=False)
class Note:
    note_id: str
    patient_id: str
    category: NoteCategory
    timestamp: datetime | None
    text: str

    @cached_property
    def sentences(self) -> tuple[Sentence, ...]:
        # Imported lazily: text_prep depends on this module for the Sentence type.
        from .text_prep import split_sentences

        return tuple(split_sentences(self.text, note_id=self.note_id))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Note):
            return NotImplemented
        return (
            self.note_id == other.note_id
            and self.patient_id == other.patient_id
            and self.category == other.category
            and self.timestamp == other.timestamp
            and self.text == other.text
        )

    def __hash__(self) -> int:
        return hash((self.note_id, self.patient_id, self.category, self.timestamp, self.text))

    def to_dict(self) -> dict[str, Any]:
        return {
            "note_id": self.note_id,
            "patient_id": self.patient_id,
            "category": self.category.value,
            "timestamp": _format_timestamp(self.timestamp),
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Note":
        raw_ts = d.get("timestamp")
        return cls(
            note_id=d["note_id"],
            patient_id=d["patient_id"],
            category=NoteCategory(d["category"]),
            timestamp=parse_timestamp(raw_ts) if raw_ts else None,
            text=d["text"],
        )


@dataclass(frozen=True)
class DiagnosisQuery:
    """A condition to investigate for a patient, framed as risk or presence."""

    condition: str
    kind: QueryKind

    def __post_init__(self) -> None:
        if not self.condition.strip():
            raise ValueError("condition must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {"condition": self.condition, "kind": self.kind.value}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DiagnosisQuery":
        return cls(condition=d["condition"], kind=QueryKind(d["kind"]))


@dataclass(frozen=True)
class Highlight:
    """A note sentence supporting an evidence item, found by embedding similarity."""

    note_id: str
    sentence_index: int
    score: float

    def to_dict(self) -> dict[str, Any]:
        return {"note_id": self.note_id, "sentence_index": self.sentence_index, "score": self.score}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Highlight":
        return cls(note_id=d["note_id"], sentence_index=int(d["sentence_index"]), score=float(d["score"]))


def evidence_id(
    patient_id: str,
    condition: str,
    kind: QueryKind,
    source: EvidenceSource,
    text: str,
    extra: str = "",
) -> str:
    """Deterministic evidence identifier.

    Derived from content rather than drawn at random so that re-running the
    same inputs reproduces the same ids byte for byte.
    """
    key = "|".join([patient_id, condition, kind.value, source.value, normalize_ws(text), extra])
    return "ev" + hashlib.sha256(key.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class EvidenceItem:
    id: str
    patient_id: str
    condition: str
    kind: QueryKind
    source: EvidenceSource
    text: str
    source_note_id: str
    source_chunk_index: int | None = None
    confidence: float | None = None
    highlights: tuple[Highlight, ...] = ()
    status: EvidenceStatus = EvidenceStatus.ACTIVE
    score: float | None = None
    # Chunks beyond the first that produced the same normalized text, as
    # (note_id, chunk_index) pairs recorded during dedupe.
    duplicate_sources: tuple[tuple[str, int], ...] = ()

    def __post_init__(self) -> None:
        if self.confidence is not None and not (0.0 < self.confidence <= 1.0):
            raise ValueError(f"confidence out of range (0, 1]: {self.confidence}")
        if not self.text.strip():
            raise ValueError("evidence text must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "patient_id": self.patient_id,
            "condition": self.condition,
            "kind": self.kind.value,
            "source": self.source.value,
            "text": self.text,
            "source_note_id": self.source_note_id,
            "source_chunk_index": self.source_chunk_index,
            "confidence": self.confidence,
            "highlights": [h.to_dict() for h in self.highlights],
            "status": self.status.value,
            "score": self.score,
            "duplicate_sources": [list(pair) for pair in self.duplicate_sources],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvidenceItem":
        return cls(
            id=d["id"],
            patient_id=d["patient_id"],
            condition=d["condition"],
            kind=QueryKind(d["kind"]),
            source=EvidenceSource(d["source"]),
            text=d["text"],
            source_note_id=d["source_note_id"],
            source_chunk_index=d.get("source_chunk_index"),
            confidence=d.get("confidence"),
            highlights=tuple(Highlight.from_dict(h) for h in d.get("highlights", [])),
            status=EvidenceStatus(d.get("status", "active")),
            score=d.get("score"),
            duplicate_sources=tuple(
                (pair[0], int(pair[1])) for pair in d.get("duplicate_sources", [])
            ),
        )


@dataclass(frozen=True)
class RelevanceLabel:
    """An expert's judgement of one evidence item.

    When present_in_note is false the item is a hallucination and the scale
    value is ignored downstream.
    """

    value: Relevance
    present_in_note: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {"value": self.value.value, "present_in_note": self.present_in_note}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RelevanceLabel":
        return cls(value=Relevance(d["value"]), present_in_note=bool(d["present_in_note"]))


@dataclass(frozen=True)
class StepLog:
    """One backend interaction: prompt in, completion out, parse result."""

    step: str
    prompt_text: str
    raw_completion: str
    parsed_result: Any
    wall_time: float
    token_logprobs: tuple[tuple[str, float], ...] | None = None
    context: tuple[tuple[str, Any], ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "prompt_text": self.prompt_text,
            "raw_completion": self.raw_completion,
            "parsed_result": self.parsed_result,
            "wall_time": self.wall_time,
            "token_logprobs": [list(p) for p in self.token_logprobs] if self.token_logprobs is not None else None,
            "context": {k: v for k, v in self.context},
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StepLog":
        lp = d.get("token_logprobs")
        return cls(
            step=d["step"],
            prompt_text=d["prompt_text"],
            raw_completion=d["raw_completion"],
            parsed_result=d["parsed_result"],
            wall_time=float(d["wall_time"]),
            token_logprobs=tuple((t, float(v)) for t, v in lp) if lp is not None else None,
            context=tuple(sorted(d.get("context", {}).items())),
        )


@dataclass
class RunRecord:
    """Append-only log of one run: config snapshot, every step, and outputs.

    Replaying a record against the same scripted backend must reproduce the
    same outputs byte for byte, so nothing nondeterministic may leak into
    outputs (wall times live only in the step entries).
    """

    run_id: str
    config: dict[str, Any] = field(default_factory=dict)
    entries: list[StepLog] = field(default_factory=list)
    outputs: list[EvidenceItem] = field(default_factory=list)

    def log(
        self,
        step: str,
        prompt_text: str,
        raw_completion: str,
        parsed_result: Any,
        wall_time: float,
        token_logprobs: Sequence[tuple[str, float]] | None = None,
        **context: Any,
    ) -> StepLog:
        entry = StepLog(
            step=step,
            prompt_text=prompt_text,
            raw_completion=raw_completion,
            parsed_result=parsed_result,
            wall_time=wall_time,
            token_logprobs=tuple(token_logprobs) if token_logprobs is not None else None,
            context=tuple(sorted(context.items())),
        )
        self.entries.append(entry)
        return entry

    def extend(self, entries: Iterable[StepLog]) -> None:
        self.entries.extend(entries)

    def steps(self, step: str) -> list[StepLog]:
        return [e for e in self.entries if e.step == step]

    def meta_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "config": self.config,
            "outputs": [item.to_dict() for item in self.outputs],
        }

    def to_dict(self) -> dict[str, Any]:
        d = self.meta_dict()
        d["entries"] = [e.to_dict() for e in self.entries]
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunRecord":
        return cls(
            run_id=d["run_id"],
            config=dict(d.get("config", {})),
            entries=[StepLog.from_dict(e) for e in d.get("entries", [])],
            outputs=[EvidenceItem.from_dict(o) for o in d.get("outputs", [])],
        )


@dataclass
class ValidationReport:
    note_count: int = 0
    duplicate_note_ids: list[str] = field(default_factory=list)
    missing_timestamp_ids: list[str] = field(default_factory=list)
    empty_note_ids: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.duplicate_note_ids or self.missing_timestamp_ids or self.empty_note_ids)

    def issues(self) -> list[str]:
        out = []
        for note_id in self.duplicate_note_ids:
            out.append(f"duplicate note id: {note_id}")
        for note_id in self.missing_timestamp_ids:
            out.append(f"missing timestamp: {note_id}")
        for note_id in self.empty_note_ids:
            out.append(f"empty note text: {note_id}")
        return out


def validate_corpus(corpus: Any) -> ValidationReport:
    """Report duplicate ids, missing timestamps, and empty notes.

    Report-only: callers decide whether any issue is fatal.
    """
    report = ValidationReport()
    seen: set[str] = set()
    for notes in corpus.patients.values():
        for note in notes:
            report.note_count += 1
            if note.note_id in seen:
                report.duplicate_note_ids.append(note.note_id)
            seen.add(note.note_id)
            if note.timestamp is None:
                report.missing_timestamp_ids.append(note.note_id)
            if not note.text.strip():
                report.empty_note_ids.append(note.note_id)
    return report
