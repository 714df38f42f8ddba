"""Evidence retrieval over patient notes via sequential zero-shot prompting.

Each note chunk is first screened with a binary question (is the patient at
risk of X / does the patient have X); only on a yes does a second prompt
elicit the actual evidence. The single-prompt variant (answer and explain in
one go) exists for comparison runs; it is far more prone to spurious yeses.
"""

from __future__ import annotations

import re
import time
import uuid
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping, Sequence

from .embedding import EmbeddingBackend, HighlightConfig, match_highlights
from .llm import (
    BinaryAnswer,
    BinaryValue,
    CompletionBackend,
    CompletionRequest,
    complete,
    parallel_map_ordered,
    parse_binary,
    sequence_confidence,
)
from .model import (
    EvidenceItem,
    EvidenceSource,
    EvidenceStatus,
    Note,
    QueryKind,
    RunRecord,
    StepLog,
    evidence_id,
    normalize_ws,
)
from .text_prep import Chunk, ChunkingConfig, chunk_note, count_tokens

__all__ = [
    "PromptKind",
    "PromptStyle",
    "PipelineConfig",
    "Backends",
    "EvidenceBundle",
    "render_prompt",
    "prompt_overhead",
    "screen_chunk",
    "elicit_chunk",
    "run_patient",
    "run_single_prompt",
    "parse_single_completion",
    "replay_run",
    "new_run_id",
]


class PromptKind(str, Enum):
    RISK_SCREEN = "risk_screen"
    RISK_ELICIT = "risk_elicit"
    HAS_SCREEN = "has_screen"
    SIGN_ELICIT = "sign_elicit"
    SINGLE_SHOT = "single_shot"


class PromptStyle(str, Enum):
    """Elicitation wording: instruction-tuned stepwise vs concise chat style."""

    CHOICE_THEN_STEPWISE = "choice_then_stepwise"
    CONCISE = "concise"


# Screen prompts are style-independent; only elicitation wording varies.
_SCREEN_RISK = (
    "Read the following clinical note of a patient: {note}.\n"
    "Question: Is the patient at risk of {condition}?\n"
    "Choice -Yes -No.\n"
    "Answer:"
)
_SCREEN_HAS = (
    "Read the following clinical note of a patient: {note}.\n"
    "Question: Does the patient have {condition}?\n"
    "Choice -Yes -No.\n"
    "Answer:"
)
_ELICIT_RISK = {
    PromptStyle.CHOICE_THEN_STEPWISE: (
        "Read the following clinical note of a patient: {note}.\n"
        "Based on the note, why is the patient at risk of {condition}?\n"
        "Answer step by step:"
    ),
    PromptStyle.CONCISE: (
        "Read the following clinical note of a patient: {note}.\n"
        "Based on the note, why is the patient at risk of {condition}? Be concise.\n"
        "Answer:"
    ),
}
_ELICIT_SIGN = {
    PromptStyle.CHOICE_THEN_STEPWISE: (
        "Read the following clinical note of a patient: {note}.\n"
        "Question: Extract signs of {condition} from the note.\n"
        "Answer step by step:"
    ),
    PromptStyle.CONCISE: (
        "Read the following clinical note of a patient: {note}.\n"
        "Question: Extract signs of {condition} from the note. Be concise.\n"
        "Answer:"
    ),
}
_SINGLE_SHOT = {
    PromptStyle.CHOICE_THEN_STEPWISE: (
        "Read the following clinical note of a patient: {note}\n"
        "Question: Is the patient at risk of {condition}?\n"
        "Answer: Let's think step by step."
    ),
    PromptStyle.CONCISE: (
        "Read the following clinical note of a patient: {note}\n"
        "Question: Is the patient at risk of {condition}? Answer Yes or No and explain your answer. "
        "Be concise.\n"
        "Answer:"
    ),
}


def render_prompt(kind: PromptKind, condition: str, chunk_text: str, style: PromptStyle) -> str:
    """Fill a prompt template. Plain replacement, never str.format: note text
    routinely contains braces."""
    if kind is PromptKind.RISK_SCREEN:
        template = _SCREEN_RISK
    elif kind is PromptKind.HAS_SCREEN:
        template = _SCREEN_HAS
    elif kind is PromptKind.RISK_ELICIT:
        template = _ELICIT_RISK[style]
    elif kind is PromptKind.SIGN_ELICIT:
        template = _ELICIT_SIGN[style]
    elif kind is PromptKind.SINGLE_SHOT:
        template = _SINGLE_SHOT[style]
    else:  # pragma: no cover
        raise ValueError(f"unknown prompt kind: {kind}")
    return template.replace("{note}", chunk_text).replace("{condition}", condition)


def prompt_overhead(
    condition: str,
    style: PromptStyle,
    kinds: Sequence[PromptKind],
    config: ChunkingConfig | None = None,
    backend: CompletionBackend | None = None,
) -> int:
    """Worst-case template token cost across the prompts a run will send.

    Chunks are shared by every prompt kind in a mode, so the budget must
    absorb the largest template.
    """
    return max(
        count_tokens(render_prompt(kind, condition, "", style), config, backend)
        for kind in kinds
    )


_SEQUENTIAL_KINDS = (
    PromptKind.RISK_SCREEN,
    PromptKind.RISK_ELICIT,
    PromptKind.HAS_SCREEN,
    PromptKind.SIGN_ELICIT,
)


@dataclass(frozen=True)
class PipelineConfig:
    prompt_style: PromptStyle = PromptStyle.CHOICE_THEN_STEPWISE
    abstain_threshold: float | None = None
    max_evidence_tokens: int = 256
    screen_max_new_tokens: int = 4
    dedupe: bool = True
    max_workers: int = 4
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    highlight: HighlightConfig = field(default_factory=HighlightConfig)

    def __post_init__(self) -> None:
        if self.abstain_threshold is not None and not 0.0 < self.abstain_threshold < 1.0:
            raise ValueError(f"abstain_threshold must be in (0, 1), got {self.abstain_threshold}")
        if self.max_workers < 1:
            raise ValueError("max_workers must be >= 1")

    def snapshot(self) -> dict[str, Any]:
        return {
            "prompt_style": self.prompt_style.value,
            "abstain_threshold": self.abstain_threshold,
            "max_evidence_tokens": self.max_evidence_tokens,
            "screen_max_new_tokens": self.screen_max_new_tokens,
            "dedupe": self.dedupe,
            "max_workers": self.max_workers,
            "token_budget": self.chunking.token_budget,
            "tokenizer": self.chunking.tokenizer.value,
            "highlight_threshold": self.highlight.threshold,
        }

    @classmethod
    def from_snapshot(cls, d: Mapping[str, Any]) -> "PipelineConfig":
        from .text_prep import TokenizerMode

        return cls(
            prompt_style=PromptStyle(d.get("prompt_style", "choice_then_stepwise")),
            abstain_threshold=d.get("abstain_threshold"),
            max_evidence_tokens=int(d.get("max_evidence_tokens", 256)),
            screen_max_new_tokens=int(d.get("screen_max_new_tokens", 4)),
            dedupe=bool(d.get("dedupe", True)),
            max_workers=int(d.get("max_workers", 4)),
            chunking=ChunkingConfig(
                token_budget=int(d.get("token_budget", 750)),
                tokenizer=TokenizerMode(d.get("tokenizer", "approximate")),
            ),
            highlight=HighlightConfig(threshold=float(d.get("highlight_threshold", 0.9))),
        )


@dataclass(frozen=True)
class Backends:
    completion: CompletionBackend
    embedding: EmbeddingBackend | None = None


@dataclass(frozen=True)
class EvidenceBundle:
    patient_id: str
    condition: str
    items: tuple[EvidenceItem, ...]
    run_id: str

    def __post_init__(self) -> None:
        seen: set[tuple[QueryKind, str]] = set()
        for item in self.items:
            if item.status is not EvidenceStatus.ACTIVE:
                continue
            key = (item.kind, normalize_ws(item.text))
            if key in seen:
                raise ValueError(f"duplicate active evidence text for kind {item.kind.value}")
            seen.add(key)

    def active_items(self) -> tuple[EvidenceItem, ...]:
        return tuple(i for i in self.items if i.status is EvidenceStatus.ACTIVE)

    def to_dict(self) -> dict[str, Any]:
        return {
            "patient_id": self.patient_id,
            "condition": self.condition,
            "items": [i.to_dict() for i in self.items],
            "run_id": self.run_id,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvidenceBundle":
        return cls(
            patient_id=d["patient_id"],
            condition=d["condition"],
            items=tuple(EvidenceItem.from_dict(i) for i in d["items"]),
            run_id=d["run_id"],
        )


def new_run_id() -> str:
    return "r" + uuid.uuid4().hex[:12]


def screen_chunk(
    chunk: Chunk,
    condition: str,
    kind: QueryKind,
    config: PipelineConfig,
    backend: CompletionBackend,
    record: RunRecord | None = None,
) -> BinaryAnswer:
    """Binary screen for one chunk. Unparseable answers are treated as no:
    silence must never manufacture evidence."""
    prompt_kind = PromptKind.RISK_SCREEN if kind is QueryKind.RISK else PromptKind.HAS_SCREEN
    prompt = render_prompt(prompt_kind, condition, chunk.text, config.prompt_style)
    started = time.perf_counter()
    completion = complete(
        CompletionRequest(prompt=prompt, max_new_tokens=config.screen_max_new_tokens),
        backend,
    )
    answer = parse_binary(completion.text)
    if record is not None:
        record.log(
            step=prompt_kind.value,
            prompt_text=prompt,
            raw_completion=completion.text,
            parsed_result=answer.value.value,
            wall_time=time.perf_counter() - started,
            note_id=chunk.note_id,
            chunk_index=chunk.chunk_index,
            unparseable=answer.value is BinaryValue.UNPARSEABLE,
        )
    return answer


def elicit_chunk(
    chunk: Chunk,
    condition: str,
    kind: QueryKind,
    config: PipelineConfig,
    backend: CompletionBackend,
    record: RunRecord | None = None,
    patient_id: str = "",
) -> EvidenceItem | None:
    """Ask the follow-up question on a screened-yes chunk and build the item.

    Requests token log-probabilities for abstention; when the backend cannot
    supply them the item stays active and the gap is logged.
    """
    prompt_kind = PromptKind.RISK_ELICIT if kind is QueryKind.RISK else PromptKind.SIGN_ELICIT
    prompt = render_prompt(prompt_kind, condition, chunk.text, config.prompt_style)
    started = time.perf_counter()
    completion = complete(
        CompletionRequest(prompt=prompt, max_new_tokens=config.max_evidence_tokens, want_logprobs=True),
        backend,
    )
    text = completion.text.strip()
    confidence = (
        sequence_confidence(completion.token_logprobs)
        if completion.token_logprobs
        else None
    )

    item: EvidenceItem | None = None
    if text:
        status = EvidenceStatus.ACTIVE
        if config.abstain_threshold is not None and confidence is not None:
            if confidence < config.abstain_threshold:
                status = EvidenceStatus.ABSTAINED
        item = EvidenceItem(
            id=evidence_id(patient_id, condition, kind, EvidenceSource.GENERATED, text),
            patient_id=patient_id,
            condition=condition,
            kind=kind,
            source=EvidenceSource.GENERATED,
            text=text,
            source_note_id=chunk.note_id,
            source_chunk_index=chunk.chunk_index,
            confidence=confidence,
            status=status,
        )

    if record is not None:
        record.log(
            step=prompt_kind.value,
            prompt_text=prompt,
            raw_completion=completion.text,
            parsed_result={
                "kept": item is not None,
                "status": item.status.value if item is not None else "dropped_empty",
                "confidence": confidence,
            },
            wall_time=time.perf_counter() - started,
            token_logprobs=completion.token_logprobs,
            note_id=chunk.note_id,
            chunk_index=chunk.chunk_index,
            confidence_unavailable=(config.abstain_threshold is not None and confidence is None),
        )
    return item


def _sorted_notes(notes: Sequence[Note]) -> list[Note]:
    return sorted(notes, key=lambda n: (n.timestamp is None, n.timestamp, n.note_id))


def _snapshot(
    patient_id: str,
    condition: str,
    mode: str,
    config: PipelineConfig,
    backends: Backends,
) -> dict[str, Any]:
    snap = {"patient_id": patient_id, "condition": condition, "mode": mode}
    snap.update(config.snapshot())
    snap["completion_backend"] = backends.completion.fingerprint()
    snap["embedding_backend"] = backends.embedding.fingerprint() if backends.embedding else None
    return snap


def _assemble_bundle(
    produced: Sequence[tuple[EvidenceItem | None, Note]],
    patient_id: str,
    condition: str,
    config: PipelineConfig,
    backends: Backends,
    run_id: str,
) -> list[EvidenceItem]:
    """Dedupe active items by normalized text and attach highlights.

    Items arrive in deterministic traversal order (note timestamp, chunk
    index, risk before has), so "first occurrence wins" is reproducible.
    """
    items: list[EvidenceItem] = []
    notes_for_item: list[Note] = []
    first_index: dict[tuple[QueryKind, str], int] = {}
    extra_sources: dict[int, list[tuple[str, int]]] = {}

    for item, note in produced:
        if item is None:
            continue
        if config.dedupe and item.status is EvidenceStatus.ACTIVE:
            key = (item.kind, normalize_ws(item.text))
            if key in first_index:
                idx = first_index[key]
                extra_sources.setdefault(idx, []).append(
                    (item.source_note_id, item.source_chunk_index or 0)
                )
                continue
            first_index[key] = len(items)
        items.append(item)
        notes_for_item.append(note)

    final: list[EvidenceItem] = []
    for idx, (item, note) in enumerate(zip(items, notes_for_item)):
        if idx in extra_sources:
            item = replace(item, duplicate_sources=tuple(extra_sources[idx]))
        if backends.embedding is not None:
            highlights = match_highlights(item.text, note, config.highlight, backends.embedding)
            item = replace(item, highlights=tuple(highlights))
        final.append(item)
    return final


def run_patient(
    notes: Sequence[Note],
    condition: str,
    config: PipelineConfig,
    backends: Backends,
    run_id: str | None = None,
    record: RunRecord | None = None,
) -> EvidenceBundle:
    """Sequential screen-then-elicit over every chunk of every note.

    Both query framings run per chunk, risk first. Output order is fixed:
    note timestamp, then chunk index, then risk before has. Backend failures
    propagate; whatever was logged up to that point stays in the record.
    """
    if not notes:
        raise ValueError("run_patient requires at least one note")
    patient_ids = {n.patient_id for n in notes}
    if len(patient_ids) != 1:
        raise ValueError(f"notes span multiple patients: {sorted(patient_ids)}")
    patient_id = notes[0].patient_id
    run_id = run_id or new_run_id()
    if record is None:
        record = RunRecord(run_id=run_id)
    if not record.config:
        record.config = _snapshot(patient_id, condition, "sequential", config, backends)

    overhead = prompt_overhead(
        condition, config.prompt_style, _SEQUENTIAL_KINDS, config.chunking, backends.completion
    )

    tasks: list[tuple[Chunk, Note, QueryKind]] = []
    for note in _sorted_notes(notes):
        for chunk in chunk_note(note, overhead, config.chunking, backends.completion):
            for kind in (QueryKind.RISK, QueryKind.HAS):
                tasks.append((chunk, note, kind))

    def work(task: tuple[Chunk, Note, QueryKind]) -> tuple[list[StepLog], EvidenceItem | None, Note]:
        chunk, note, kind = task
        local = RunRecord(run_id=run_id)
        answer = screen_chunk(chunk, condition, kind, config, backends.completion, local)
        item = None
        if answer.is_yes:
            item = elicit_chunk(
                chunk, condition, kind, config, backends.completion, local, patient_id=patient_id
            )
        return local.entries, item, note

    results = parallel_map_ordered(work, tasks, config.max_workers)

    produced: list[tuple[EvidenceItem | None, Note]] = []
    for entries, item, note in results:
        record.extend(entries)
        produced.append((item, note))

    final = _assemble_bundle(produced, patient_id, condition, config, backends, run_id)
    record.outputs = list(final)
    return EvidenceBundle(patient_id=patient_id, condition=condition, items=tuple(final), run_id=run_id)


_LEADING_BINARY_RE = re.compile(r"^\W*(yes|no)\b[\s.,:;!-]*", re.IGNORECASE)
_FINAL_ANSWER_RE = re.compile(
    r"(?:final answer|the answer)\s*(?:is)?\s*[:\-]?\s*(yes|no)\b[.!]?",
    re.IGNORECASE,
)


def parse_single_completion(text: str) -> tuple[BinaryAnswer, str]:
    """Split a one-shot answer-and-explain completion into verdict and explanation.

    Prefers an explicit final-answer marker (stepwise outputs end with one);
    otherwise falls back to a leading yes/no. Anything else is unparseable
    and counts as no.
    """
    matches = list(_FINAL_ANSWER_RE.finditer(text))
    if matches:
        last = matches[-1]
        explanation = (text[: last.start()] + text[last.end() :]).strip()
        return BinaryAnswer(value=BinaryValue(last.group(1).lower()), raw=text), explanation
    lead = _LEADING_BINARY_RE.match(text.strip())
    if lead:
        explanation = text.strip()[lead.end() :].strip()
        return BinaryAnswer(value=BinaryValue(lead.group(1).lower()), raw=text), explanation
    return BinaryAnswer(value=BinaryValue.UNPARSEABLE, raw=text), ""


def run_single_prompt(
    notes: Sequence[Note],
    condition: str,
    config: PipelineConfig,
    backends: Backends,
    run_id: str | None = None,
    record: RunRecord | None = None,
) -> EvidenceBundle:
    """Comparison mode: one answer-and-explain prompt per chunk, no screen.

    An item is emitted whenever the final answer parses as yes and the
    explanation is non-empty. Items are risk-framed, matching the question.
    """
    if not notes:
        raise ValueError("run_single_prompt requires at least one note")
    patient_ids = {n.patient_id for n in notes}
    if len(patient_ids) != 1:
        raise ValueError(f"notes span multiple patients: {sorted(patient_ids)}")
    patient_id = notes[0].patient_id
    run_id = run_id or new_run_id()
    if record is None:
        record = RunRecord(run_id=run_id)
    if not record.config:
        record.config = _snapshot(patient_id, condition, "single", config, backends)

    overhead = prompt_overhead(
        condition, config.prompt_style, (PromptKind.SINGLE_SHOT,), config.chunking, backends.completion
    )

    tasks: list[tuple[Chunk, Note]] = []
    for note in _sorted_notes(notes):
        for chunk in chunk_note(note, overhead, config.chunking, backends.completion):
            tasks.append((chunk, note))

    def work(task: tuple[Chunk, Note]) -> tuple[list[StepLog], EvidenceItem | None, Note]:
        chunk, note = task
        local = RunRecord(run_id=run_id)
        prompt = render_prompt(PromptKind.SINGLE_SHOT, condition, chunk.text, config.prompt_style)
        started = time.perf_counter()
        completion = complete(
            CompletionRequest(
                prompt=prompt, max_new_tokens=config.max_evidence_tokens, want_logprobs=True
            ),
            backends.completion,
        )
        answer, explanation = parse_single_completion(completion.text)
        confidence = (
            sequence_confidence(completion.token_logprobs) if completion.token_logprobs else None
        )
        item = None
        if answer.is_yes and explanation:
            status = EvidenceStatus.ACTIVE
            if (
                config.abstain_threshold is not None
                and confidence is not None
                and confidence < config.abstain_threshold
            ):
                status = EvidenceStatus.ABSTAINED
            item = EvidenceItem(
                id=evidence_id(
                    patient_id, condition, QueryKind.RISK, EvidenceSource.GENERATED, explanation
                ),
                patient_id=patient_id,
                condition=condition,
                kind=QueryKind.RISK,
                source=EvidenceSource.GENERATED,
                text=explanation,
                source_note_id=chunk.note_id,
                source_chunk_index=chunk.chunk_index,
                confidence=confidence,
                status=status,
            )
        local.log(
            step=PromptKind.SINGLE_SHOT.value,
            prompt_text=prompt,
            raw_completion=completion.text,
            parsed_result={"answer": answer.value.value, "kept": item is not None},
            wall_time=time.perf_counter() - started,
            token_logprobs=completion.token_logprobs,
            note_id=chunk.note_id,
            chunk_index=chunk.chunk_index,
        )
        return local.entries, item, note

    results = parallel_map_ordered(work, tasks, config.max_workers)

    produced: list[tuple[EvidenceItem | None, Note]] = []
    for entries, item, note in results:
        record.extend(entries)
        produced.append((item, note))

    final = _assemble_bundle(produced, patient_id, condition, config, backends, run_id)
    record.outputs = list(final)
    return EvidenceBundle(patient_id=patient_id, condition=condition, items=tuple(final), run_id=run_id)


def replay_run(
    record: RunRecord,
    notes: Sequence[Note],
    backends: Backends,
) -> EvidenceBundle:
    """Re-execute a recorded run from its config snapshot, keeping its run id.

    Against the same scripted backends this must reproduce the original
    outputs byte for byte.
    """
    snap = record.config
    mode = snap.get("mode", "sequential")
    config = PipelineConfig.from_snapshot(snap)
    condition = snap["condition"]
    fresh = RunRecord(run_id=record.run_id, config=dict(snap))
    if mode == "sequential":
        return run_patient(notes, condition, config, backends, run_id=record.run_id, record=fresh)
    if mode == "single":
        return run_single_prompt(notes, condition, config, backends, run_id=record.run_id, record=fresh)
    if mode == "baseline":
        from .baseline import BaselineConfig, build_profile, retrieve_topk

        if backends.embedding is None:
            raise ValueError("baseline replay requires an embedding backend")
        baseline_config = BaselineConfig(
            k=int(snap.get("k", 20)),
            min_sentence_tokens=int(snap.get("min_sentence_tokens", 3)),
        )
        profile = build_profile(condition, list(snap["risk_factors"]), backends.embedding)
        items = retrieve_topk(notes, profile, baseline_config, backends.embedding)
        fresh.outputs = list(items)
        return EvidenceBundle(
            patient_id=snap["patient_id"],
            condition=condition,
            items=tuple(items),
            run_id=record.run_id,
        )
    raise ValueError(f"unknown run mode in record: {mode}")
