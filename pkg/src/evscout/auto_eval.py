"""Automated evaluation of generated evidence with a judge backend.

Three steps per evidence item, in strict order: extract the claimed factors,
verify each factor is actually in the source note, and only for present
factors ask whether they are relevant to the diagnosis. An item none of
whose factors appear in the note is a hallucination; relevance is never
asked about absent factors.
"""

from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping, Sequence

from .llm import (
    BinaryValue,
    CompletionBackend,
    CompletionRequest,
    complete,
    parallel_map_ordered,
    parse_binary,
)
from .model import (
    EvidenceItem,
    EvidenceStatus,
    Note,
    QueryKind,
    Relevance,
    RelevanceLabel,
    RunRecord,
    StepLog,
    normalize_ws,
)
from .pipeline import EvidenceBundle
from .text_prep import ChunkingConfig, chunk_note, count_tokens

__all__ = [
    "FactorKind",
    "Factor",
    "EvalVerdict",
    "EvalConfig",
    "LabelMapping",
    "extract_factors",
    "verify_presence",
    "validate_relevance",
    "evaluate_bundle",
    "map_expert_label",
]

log = logging.getLogger(__name__)


class FactorKind(str, Enum):
    RISK = "risk"
    SIGN = "sign"


# One-shot extraction prompts. The exemplars anchor the expected list format.
_EXTRACT_RISK = (
    "Read the following statement: The patient is at risk of intracranial hemorrhage due to "
    "presence of an endotracheal tube (ETT) in the patient's trachea which may increase the "
    "risk of complications such as aspiration and airway obstruction.\n"
    "Question: Extract the risk factors from the statement as a list. Be concise.\n"
    "Answer: 1. presence of endotracheal tube (ETT) in the trachea.\n"
    "Read the following statement: {evidence}\n"
    "Question: Extract the risk factors from the statement as a list. Be concise.\n"
    "Answer:"
)
_EXTRACT_SIGN = (
    "Read the following statement: A patient may have intracranial hemorrhage because of the "
    "following report - Large left subdural hematoma, extensive subarachnoid hemorrhage, right "
    "temporal effacement, left uncal herniation, and effacement of the sulci.\n"
    "Question: Extract the signs from the statement as a list. Be concise.\n"
    "Answer: 1. Large left subdural hematoma 2. Extensive subarachnoid hemorrhage 3. Right "
    "temporal effacement 4. Left uncal herniation 5. Effacement of the sulci\n"
    "Read the following statement: A patient may have {condition} because of the following "
    "report - {evidence}.\n"
    "Question: Extract the signs from the statement as a list. Be concise.\n"
    "Answer:"
)
_VERIFY = (
    "Read the following clinical note of a patient: {note}\n"
    "Question: Does the patient have {factor}? Answer Yes or No."
)
_VALIDATE_RISK = (
    "Is {factor} a risk factor of {condition}? Choice: -Yes -No. Be concise.\n"
    "Answer:"
)
_VALIDATE_SIGN = (
    "A patient is showing the following sign: {factor}.\n"
    "Question: Can the sign indicate {condition}? Choice: -Yes -No. Be concise.\n"
    "Answer:"
)


def _fill(template: str, **slots: str) -> str:
    out = template
    for name, value in slots.items():
        out = out.replace("{" + name + "}", value)
    return out


@dataclass(frozen=True)
class Factor:
    """One claimed risk factor or sign pulled out of an evidence item."""

    text: str
    kind: FactorKind
    present_in_note: bool | None = None
    valid_for_diagnosis: bool | None = None

    def __post_init__(self) -> None:
        if self.valid_for_diagnosis is not None and self.present_in_note is not True:
            raise ValueError("relevance may only be recorded for factors present in the note")

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "kind": self.kind.value,
            "present_in_note": self.present_in_note,
            "valid_for_diagnosis": self.valid_for_diagnosis,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Factor":
        return cls(
            text=d["text"],
            kind=FactorKind(d["kind"]),
            present_in_note=d.get("present_in_note"),
            valid_for_diagnosis=d.get("valid_for_diagnosis"),
        )


@dataclass(frozen=True)
class EvalVerdict:
    """Judge outcome for one evidence item."""

    evidence_id: str
    factors: tuple[Factor, ...]
    hallucinated: bool
    relevance_fraction: float | None
    unevaluable: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "evidence_id": self.evidence_id,
            "factors": [f.to_dict() for f in self.factors],
            "hallucinated": self.hallucinated,
            "relevance_fraction": self.relevance_fraction,
            "unevaluable": self.unevaluable,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvalVerdict":
        return cls(
            evidence_id=d["evidence_id"],
            factors=tuple(Factor.from_dict(f) for f in d["factors"]),
            hallucinated=bool(d["hallucinated"]),
            relevance_fraction=d.get("relevance_fraction"),
            unevaluable=bool(d.get("unevaluable", False)),
        )


@dataclass(frozen=True)
class EvalConfig:
    extract_max_new_tokens: int = 128
    answer_max_new_tokens: int = 4
    max_workers: int = 4
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)


@dataclass(frozen=True)
class LabelMapping:
    """Expert five-point scale to binary. Strict also counts weak as not useful."""

    strict: bool = False


_LIST_SPLIT_RE = re.compile(r"\s*\d+[.)]\s+")
_BULLET_RE = re.compile(r"^\s*[-*•]\s*")


def _parse_factor_list(text: str) -> list[str]:
    """Parse a numbered or bulleted list; a bare line counts as one factor."""
    body = text.strip()
    if not body:
        return []
    parts = _LIST_SPLIT_RE.split(body)
    if len(parts) > 1:
        raw_items = parts[1:]  # anything before "1." is preamble
    else:
        lines = [ln for ln in body.splitlines() if ln.strip()]
        if len(lines) > 1 or (lines and _BULLET_RE.match(lines[0])):
            raw_items = [_BULLET_RE.sub("", ln) for ln in lines]
        else:
            raw_items = [body]
    items: list[str] = []
    seen: set[str] = set()
    for raw in raw_items:
        factor = normalize_ws(raw).strip().rstrip(".").strip()
        if not factor:
            continue
        key = factor.lower()
        if key in seen:
            continue
        seen.add(key)
        items.append(factor)
    return items


def extract_factors(
    item: EvidenceItem,
    backend: CompletionBackend,
    config: EvalConfig | None = None,
    record: RunRecord | None = None,
) -> list[Factor]:
    """Pull the claimed factors out of one evidence item via a one-shot prompt."""
    config = config or EvalConfig()
    kind = FactorKind.RISK if item.kind is QueryKind.RISK else FactorKind.SIGN
    if kind is FactorKind.RISK:
        prompt = _fill(_EXTRACT_RISK, evidence=item.text)
    else:
        prompt = _fill(_EXTRACT_SIGN, condition=item.condition, evidence=item.text)
    started = time.perf_counter()
    completion = complete(
        CompletionRequest(prompt=prompt, max_new_tokens=config.extract_max_new_tokens),
        backend,
    )
    texts = _parse_factor_list(completion.text)
    if not texts:
        log.warning("no factors parsed from judge output for evidence %s", item.id)
    if record is not None:
        record.log(
            step="extract_factors",
            prompt_text=prompt,
            raw_completion=completion.text,
            parsed_result=texts,
            wall_time=time.perf_counter() - started,
            evidence_id=item.id,
        )
    return [Factor(text=t, kind=kind) for t in texts]


def verify_presence(
    note: Note,
    factor: Factor,
    backend: CompletionBackend,
    config: EvalConfig | None = None,
    record: RunRecord | None = None,
    evidence_id: str = "",
) -> bool:
    """Is the factor present in the note? Chunked when the note is long,
    aggregated by OR; an unparseable answer counts as absent."""
    config = config or EvalConfig()
    overhead = count_tokens(_fill(_VERIFY, note="", factor=factor.text), config.chunking)
    chunks = chunk_note(note, overhead, config.chunking)
    present = False
    for chunk in chunks:
        prompt = _fill(_VERIFY, note=chunk.text, factor=factor.text)
        started = time.perf_counter()
        completion = complete(
            CompletionRequest(prompt=prompt, max_new_tokens=config.answer_max_new_tokens),
            backend,
        )
        answer = parse_binary(completion.text)
        if record is not None:
            record.log(
                step="verify_presence",
                prompt_text=prompt,
                raw_completion=completion.text,
                parsed_result=answer.value.value,
                wall_time=time.perf_counter() - started,
                evidence_id=evidence_id,
                factor=factor.text,
                note_id=note.note_id,
                chunk_index=chunk.chunk_index,
                unparseable=answer.value is BinaryValue.UNPARSEABLE,
            )
        if answer.is_yes:
            present = True
            break
    return present


def validate_relevance(
    factor: Factor,
    condition: str,
    backend: CompletionBackend,
    config: EvalConfig | None = None,
    record: RunRecord | None = None,
    evidence_id: str = "",
) -> bool:
    """Is a present factor actually relevant to the condition?"""
    config = config or EvalConfig()
    if factor.kind is FactorKind.RISK:
        prompt = _fill(_VALIDATE_RISK, factor=factor.text, condition=condition)
    else:
        prompt = _fill(_VALIDATE_SIGN, factor=factor.text, condition=condition)
    started = time.perf_counter()
    completion = complete(
        CompletionRequest(prompt=prompt, max_new_tokens=config.answer_max_new_tokens),
        backend,
    )
    answer = parse_binary(completion.text)
    if record is not None:
        record.log(
            step="validate_relevance",
            prompt_text=prompt,
            raw_completion=completion.text,
            parsed_result=answer.value.value,
            wall_time=time.perf_counter() - started,
            evidence_id=evidence_id,
            factor=factor.text,
            unparseable=answer.value is BinaryValue.UNPARSEABLE,
        )
    return answer.is_yes


def evaluate_bundle(
    bundle: EvidenceBundle,
    notes: Sequence[Note],
    backend: CompletionBackend,
    config: EvalConfig | None = None,
    record: RunRecord | None = None,
) -> list[EvalVerdict]:
    """Judge every active item of a bundle; verdicts in bundle item order.

    The per-factor protocol is strictly extract -> verify -> (validate only
    if present). Items whose extraction yields nothing are unevaluable and
    excluded from aggregates.
    """
    config = config or EvalConfig()
    notes_by_id = {note.note_id: note for note in notes}
    items = [item for item in bundle.items if item.status is EvidenceStatus.ACTIVE]
    for item in items:
        if item.source_note_id not in notes_by_id:
            raise ValueError(f"evidence {item.id} sources unknown note {item.source_note_id}")

    def judge(item: EvidenceItem) -> tuple[list[StepLog], EvalVerdict]:
        local = RunRecord(run_id=record.run_id if record is not None else "eval")
        factors = extract_factors(item, backend, config, local)
        if not factors:
            verdict = EvalVerdict(
                evidence_id=item.id,
                factors=(),
                hallucinated=False,
                relevance_fraction=None,
                unevaluable=True,
            )
            return local.entries, verdict
        note = notes_by_id[item.source_note_id]
        judged: list[Factor] = []
        for factor in factors:
            present = verify_presence(note, factor, backend, config, local, evidence_id=item.id)
            if present:
                valid = validate_relevance(
                    factor, item.condition, backend, config, local, evidence_id=item.id
                )
                judged.append(
                    Factor(
                        text=factor.text,
                        kind=factor.kind,
                        present_in_note=True,
                        valid_for_diagnosis=valid,
                    )
                )
            else:
                judged.append(Factor(text=factor.text, kind=factor.kind, present_in_note=False))
        present_count = sum(1 for f in judged if f.present_in_note)
        hallucinated = present_count == 0
        fraction = (
            sum(1 for f in judged if f.valid_for_diagnosis) / present_count
            if present_count
            else None
        )
        verdict = EvalVerdict(
            evidence_id=item.id,
            factors=tuple(judged),
            hallucinated=hallucinated,
            relevance_fraction=fraction,
        )
        return local.entries, verdict

    results = parallel_map_ordered(judge, items, config.max_workers)
    verdicts: list[EvalVerdict] = []
    for entries, verdict in results:
        if record is not None:
            record.extend(entries)
        verdicts.append(verdict)
    return verdicts


def map_expert_label(label: RelevanceLabel, mapping: LabelMapping | None = None) -> int | None:
    """Binary gold label from an expert annotation.

    None marks a hallucination (the expert said the evidence is not in the
    note), which downstream code counts separately rather than as 0 or 1.
    Lenient mapping counts everything above Not Useful as relevant; strict
    also drops Weak Correlation to 0.
    """
    mapping = mapping or LabelMapping()
    if not label.present_in_note:
        return None
    if label.value is Relevance.NOT_USEFUL:
        return 0
    if label.value is Relevance.WEAK_CORRELATION:
        return 0 if mapping.strict else 1
    return 1
