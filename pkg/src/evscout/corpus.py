"""Corpus loading, instance sampling, diagnosis extraction, and persistence.

The corpus file is line-delimited JSON holding three record types (notes,
imaging events, visits). Sampling picks patients whose brain imaging fell
within a window of an emergency visit and who carry enough notes to search.
Diagnoses come out of the reference radiology report by indicator phrases.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .model import (
    DiagnosisQuery,
    EvidenceStatus,
    Note,
    NoteCategory,
    QueryKind,
    Relevance,
    RelevanceLabel,
    RunRecord,
    parse_timestamp,
)

__all__ = [
    "CorpusFormatError",
    "DuplicateRunError",
    "RunNotFoundError",
    "AnnotationImportError",
    "ImagingEvent",
    "Visit",
    "Corpus",
    "SamplingCriteria",
    "SampledInstance",
    "LikelyIndicatorRules",
    "load_corpus",
    "sample_instances",
    "extract_diagnoses",
    "exceeds_evidence_cap",
    "RunStore",
    "import_expert_annotations",
    "annotations_to_delimited",
]

log = logging.getLogger(__name__)


class CorpusFormatError(ValueError):
    pass


class DuplicateRunError(RuntimeError):
    pass


class RunNotFoundError(LookupError):
    pass


class AnnotationImportError(ValueError):
    pass


@dataclass(frozen=True)
class ImagingEvent:
    patient_id: str
    event_id: str
    timestamp: datetime
    modality: str


@dataclass(frozen=True)
class Visit:
    patient_id: str
    visit_id: str
    admit_timestamp: datetime
    department: str


@dataclass
class Corpus:
    patients: dict[str, list[Note]] = field(default_factory=dict)
    imaging_events: list[ImagingEvent] = field(default_factory=list)
    visits: list[Visit] = field(default_factory=list)

    @property
    def note_count(self) -> int:
        return sum(len(notes) for notes in self.patients.values())

    def notes_for(self, patient_id: str) -> list[Note]:
        return self.patients.get(patient_id, [])

    def note_by_id(self, note_id: str) -> Note:
        for notes in self.patients.values():
            for note in notes:
                if note.note_id == note_id:
                    return note
        raise KeyError(note_id)


_REQUIRED_FIELDS = {
    "note": ("patient_id", "id", "category", "timestamp", "text"),
    "imaging": ("patient_id", "id", "modality", "timestamp"),
    "visit": ("patient_id", "id", "department", "timestamp"),
}


def load_corpus(path: str | Path) -> Corpus:
    """Parse a line-delimited corpus file; all errors carry a line number."""
    corpus = Corpus()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{line_no}: malformed JSON: {exc}")
            record_type = row.get("record_type")
            if record_type not in _REQUIRED_FIELDS:
                raise CorpusFormatError(
                    f"{path}:{line_no}: unknown record_type {record_type!r}"
                )
            for name in _REQUIRED_FIELDS[record_type]:
                if name not in row:
                    raise CorpusFormatError(f"{path}:{line_no}: missing field {name!r}")
            try:
                timestamp = parse_timestamp(row["timestamp"])
            except ValueError as exc:
                raise CorpusFormatError(f"{path}:{line_no}: bad timestamp: {exc}")

            if record_type == "note":
                raw_category = row["category"]
                try:
                    category = NoteCategory(raw_category)
                except ValueError:
                    log.warning(
                        "%s:%d: unknown note category %r, treated as other",
                        path,
                        line_no,
                        raw_category,
                    )
                    category = NoteCategory.OTHER
                note = Note(
                    note_id=row["id"],
                    patient_id=row["patient_id"],
                    category=category,
                    timestamp=timestamp,
                    text=row["text"],
                )
                corpus.patients.setdefault(note.patient_id, []).append(note)
            elif record_type == "imaging":
                corpus.imaging_events.append(
                    ImagingEvent(
                        patient_id=row["patient_id"],
                        event_id=row["id"],
                        timestamp=timestamp,
                        modality=row["modality"],
                    )
                )
            else:
                corpus.visits.append(
                    Visit(
                        patient_id=row["patient_id"],
                        visit_id=row["id"],
                        admit_timestamp=timestamp,
                        department=row["department"],
                    )
                )
    for notes in corpus.patients.values():
        notes.sort(key=lambda n: (n.timestamp is None, n.timestamp, n.note_id))
    return corpus


@dataclass(frozen=True)
class SamplingCriteria:
    imaging_window_hours: float = 48.0
    min_notes: int = 10
    max_evidence_per_diagnosis: int = 20


@dataclass(frozen=True)
class SampledInstance:
    patient_id: str
    reference_report_id: str
    imaging_event_id: str


def _is_emergency(department: str) -> bool:
    dep = department.strip().lower()
    return dep in {"er", "ed"} or "emergency" in dep or "urgent" in dep


def _is_brain_imaging(modality: str) -> bool:
    mod = modality.lower()
    return "brain" in mod or "head" in mod


def sample_instances(corpus: Corpus, criteria: SamplingCriteria | None = None) -> list[SampledInstance]:
    """Select one instance per qualifying patient.

    A patient qualifies when some brain imaging event falls within the
    window after an emergency visit admission (inclusive at the boundary)
    and the patient carries at least min_notes notes. The reference report
    is the radiology note nearest in time to the earliest qualifying imaging
    event; a patient without any radiology note is skipped.
    """
    criteria = criteria or SamplingCriteria()
    window = timedelta(hours=criteria.imaging_window_hours)
    visits_by_patient: dict[str, list[Visit]] = {}
    for visit in corpus.visits:
        if _is_emergency(visit.department):
            visits_by_patient.setdefault(visit.patient_id, []).append(visit)

    instances: list[SampledInstance] = []
    for patient_id in sorted(corpus.patients):
        notes = corpus.patients[patient_id]
        if len(notes) < criteria.min_notes:
            continue
        er_visits = visits_by_patient.get(patient_id)
        if not er_visits:
            continue
        qualifying = [
            event
            for event in corpus.imaging_events
            if event.patient_id == patient_id
            and _is_brain_imaging(event.modality)
            and any(
                timedelta(0) <= event.timestamp - visit.admit_timestamp <= window
                for visit in er_visits
            )
        ]
        if not qualifying:
            continue
        event = min(qualifying, key=lambda e: (e.timestamp, e.event_id))
        radiology = [n for n in notes if n.category is NoteCategory.RADIOLOGY and n.timestamp]
        if not radiology:
            log.warning("patient %s qualifies but has no radiology report; skipped", patient_id)
            continue
        reference = min(
            radiology,
            key=lambda n: (abs(n.timestamp - event.timestamp), n.timestamp, n.note_id),
        )
        instances.append(
            SampledInstance(
                patient_id=patient_id,
                reference_report_id=reference.note_id,
                imaging_event_id=event.event_id,
            )
        )
    return instances


@dataclass(frozen=True)
class LikelyIndicatorRules:
    """Phrase rules that pull candidate diagnoses out of report impressions."""

    indicator_phrases: tuple[str, ...] = (
        "likely represent",
        "concerning for",
        "diagnosis include",
    )
    prefix_rules: tuple[tuple[str, str], ...] = (
        ("infarction", "cerebral infarction"),
        ("metastasis", "brain metastasis"),
    )
    exclusions: tuple[str, ...] = ("old infarction",)


# A captured phrase ends at the first period, semicolon, newline, " and ", or
# " with " after the indicator.
_CAPTURE_STOP_RE = re.compile(r"\.|;|\n|\sand\s|\swith\s")
# Leftover inflection of the indicator itself ("likely representS ...",
# "diagnosis includING ...") plus a leading article, never part of a noun.
_LEADING_FILLER_RE = re.compile(r"^(?:(?:s|ing)\b\s*)?(?:(?:a|an|the)\s+)?", re.IGNORECASE)


def extract_diagnoses(report: Note, rules: LikelyIndicatorRules | None = None) -> list[DiagnosisQuery]:
    """Extract diagnoses suggested by a reference report's wording.

    The indicator phrases mark statements of suspected findings, so queries
    come out framed as "does the patient have" questions. Matching is
    case-insensitive; captured phrases are lowercased, rewritten by the
    prefix rules on exact match, filtered by the exclusion list, and deduped
    preserving first-seen order.
    """
    rules = rules or LikelyIndicatorRules()
    text = report.text.lower()
    prefix_map = dict(rules.prefix_rules)
    exclusions = set(rules.exclusions)

    found: list[str] = []
    seen: set[str] = set()
    for phrase in rules.indicator_phrases:
        start = 0
        while True:
            at = text.find(phrase, start)
            if at == -1:
                break
            tail = text[at + len(phrase) :]
            stop = _CAPTURE_STOP_RE.search(tail)
            captured = tail[: stop.start()] if stop else tail
            # Strip plural/participle leftovers of the indicator itself
            # ("likely representS ...") and leading articles.
            captured = _LEADING_FILLER_RE.sub("", captured.strip(), count=1).strip(" ,:")
            start = at + len(phrase)
            if not captured:
                continue
            if captured in exclusions:
                continue
            captured = prefix_map.get(captured, captured)
            if captured in seen:
                continue
            seen.add(captured)
            found.append(captured)
    return [DiagnosisQuery(condition=c, kind=QueryKind.HAS) for c in found]


def exceeds_evidence_cap(active_item_count: int, criteria: SamplingCriteria | None = None) -> bool:
    """Instances with more active evidence than the cap are marked excluded
    (kept on disk, skipped by reports)."""
    criteria = criteria or SamplingCriteria()
    return active_item_count > criteria.max_evidence_per_diagnosis


_RUN_ID_RE = re.compile(r"^[A-Za-z0-9_-]+$")


class RunStore:
    """Write-once persistence for run records under a single directory.

    Each run owns two files: {run_id}.meta (config and outputs) and
    {run_id}.log (one JSON line per step). Nothing is ever overwritten.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _paths(self, run_id: str) -> tuple[Path, Path]:
        if not _RUN_ID_RE.match(run_id):
            raise ValueError(f"unsafe run id: {run_id!r}")
        return self.directory / f"{run_id}.meta", self.directory / f"{run_id}.log"

    def has(self, run_id: str) -> bool:
        meta, _ = self._paths(run_id)
        return meta.exists()

    def persist_run(self, record: RunRecord, extra_meta: Mapping[str, Any] | None = None) -> None:
        meta_path, log_path = self._paths(record.run_id)
        if meta_path.exists() or log_path.exists():
            raise DuplicateRunError(f"run {record.run_id} already persisted")
        meta = record.meta_dict()
        if extra_meta:
            overlap = set(extra_meta) & set(meta)
            if overlap:
                raise ValueError(f"extra metadata collides with record fields: {sorted(overlap)}")
            meta.update(extra_meta)
        log_lines = "".join(
            json.dumps(entry.to_dict(), ensure_ascii=False, sort_keys=True) + "\n"
            for entry in record.entries
        )
        # Meta last: a crash between the writes leaves no half-visible run.
        with open(log_path, "x", encoding="utf-8") as fh:
            fh.write(log_lines)
        with open(meta_path, "x", encoding="utf-8") as fh:
            fh.write(json.dumps(meta, ensure_ascii=False, sort_keys=True, indent=2) + "\n")

    def load_run(self, run_id: str) -> tuple[RunRecord, dict[str, Any]]:
        """Returns the reassembled record plus the full metadata mapping."""
        meta_path, log_path = self._paths(run_id)
        if not meta_path.exists():
            raise RunNotFoundError(f"run {run_id} not found in {self.directory}")
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        entries = []
        if log_path.exists():
            with open(log_path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        entries.append(json.loads(line))
        record = RunRecord.from_dict({**meta, "entries": entries})
        return record, meta

    def list_runs(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.meta"))


_ANNOTATION_HEADER = ("evidence_id", "annotator_id", "present_in_note", "relevance")

_TRUE_WORDS = {"true", "yes", "1", "y"}
_FALSE_WORDS = {"false", "no", "0", "n"}


def _parse_bool(raw: str, line_no: int) -> bool:
    word = raw.strip().lower()
    if word in _TRUE_WORDS:
        return True
    if word in _FALSE_WORDS:
        return False
    raise AnnotationImportError(f"line {line_no}: cannot parse boolean {raw!r}")


def _parse_relevance(raw: str, line_no: int) -> Relevance:
    word = raw.strip().lower().replace(" ", "_")
    try:
        return Relevance(word)
    except ValueError:
        raise AnnotationImportError(f"line {line_no}: unknown relevance value {raw!r}")


def import_expert_annotations(
    source: str | Path | Iterable[str],
    known_evidence_ids: set[str] | None = None,
) -> list[tuple[str, str, RelevanceLabel]]:
    """Read a delimited annotation table into (evidence_id, annotator, label) rows.

    Tab- or comma-delimited with a header naming all four columns. Rows with
    present_in_note false keep whatever relevance value was recorded but the
    label marks the item as a hallucination. Duplicate (annotator, evidence)
    pairs and, when a known-id set is given, unknown evidence ids are
    rejected outright.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    else:
        lines = [ln.rstrip("\n") for ln in source]
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise AnnotationImportError("empty annotation table")

    delimiter = "\t" if "\t" in lines[0] else ","
    header = tuple(h.strip() for h in lines[0].split(delimiter))
    if set(header) != set(_ANNOTATION_HEADER):
        raise AnnotationImportError(
            f"header must name {_ANNOTATION_HEADER}, got {header}"
        )
    columns = {name: header.index(name) for name in _ANNOTATION_HEADER}

    rows: list[tuple[str, str, RelevanceLabel]] = []
    seen: set[tuple[str, str]] = set()
    for line_no, line in enumerate(lines[1:], start=2):
        cells = line.split(delimiter)
        if len(cells) != len(header):
            raise AnnotationImportError(
                f"line {line_no}: expected {len(header)} cells, got {len(cells)}"
            )
        evidence = cells[columns["evidence_id"]].strip()
        annotator = cells[columns["annotator_id"]].strip()
        if not evidence or not annotator:
            raise AnnotationImportError(f"line {line_no}: empty evidence or annotator id")
        if known_evidence_ids is not None and evidence not in known_evidence_ids:
            raise AnnotationImportError(f"line {line_no}: unknown evidence id {evidence!r}")
        key = (annotator, evidence)
        if key in seen:
            raise AnnotationImportError(
                f"line {line_no}: duplicate annotation by {annotator!r} for {evidence!r}"
            )
        seen.add(key)
        present = _parse_bool(cells[columns["present_in_note"]], line_no)
        relevance = _parse_relevance(cells[columns["relevance"]], line_no)
        rows.append((evidence, annotator, RelevanceLabel(value=relevance, present_in_note=present)))
    return rows


def annotations_to_delimited(rows: Sequence[tuple[str, str, RelevanceLabel]]) -> str:
    """Inverse of import_expert_annotations, for exports and round-trips."""
    lines = ["\t".join(_ANNOTATION_HEADER)]
    for evidence, annotator, label in rows:
        lines.append(
            "\t".join(
                [
                    evidence,
                    annotator,
                    "true" if label.present_in_note else "false",
                    label.value.value,
                ]
            )
        )
    return "\n".join(lines) + "\n"
