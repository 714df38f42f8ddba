"""Purely extractive retrieval baseline over note sentences.

Risk factors for a condition are fetched once from a completion backend and
cached on disk. They are folded into a single query sentence, embedded, and
every candidate note sentence is ranked by cosine similarity against it. The
top k sentences are returned verbatim; nothing is generated.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from .embedding import EmbeddingBackend, Vector, cosine, embed
from .llm import CompletionBackend, CompletionRequest, complete
from .model import (
    EvidenceItem,
    EvidenceSource,
    Highlight,
    Note,
    QueryKind,
    RunRecord,
    evidence_id,
)
from .text_prep import count_tokens

__all__ = [
    "BaselineError",
    "BaselineConfig",
    "RiskFactorProfile",
    "RiskFactorCache",
    "fetch_risk_factors",
    "build_profile",
    "retrieve_topk",
    "RISK_FACTOR_PROMPT",
]

RISK_FACTOR_PROMPT = "List the risk factors of {condition} as a comma-separated list."


class BaselineError(RuntimeError):
    pass


@dataclass(frozen=True)
class BaselineConfig:
    k: int = 20
    min_sentence_tokens: int = 3

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.min_sentence_tokens < 0:
            raise ValueError("min_sentence_tokens must be >= 0")


@dataclass(frozen=True)
class RiskFactorProfile:
    condition: str
    factors: tuple[str, ...]
    query_sentence: str
    query_vector: Vector


class RiskFactorCache:
    """Append-only JSON-lines cache of fetched factor lists, keyed by condition."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def get(self, condition: str) -> list[str] | None:
        if not self.path.exists():
            return None
        found: list[str] | None = None
        with open(self.path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                row = json.loads(line)
                if row.get("condition") == condition:
                    found = list(row["factors"])
        return found

    def put(self, condition: str, factors: Sequence[str]) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        row = {
            "condition": condition,
            "factors": list(factors),
            "fetched_at": datetime.now(timezone.utc).isoformat(),
        }
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def _parse_factor_csv(text: str) -> list[str]:
    factors = []
    for raw in text.split(","):
        factor = raw.strip().strip(".").strip().lower()
        if factor:
            factors.append(factor)
    return factors


def fetch_risk_factors(
    condition: str,
    backend: CompletionBackend,
    cache: RiskFactorCache | None = None,
    record: RunRecord | None = None,
) -> list[str]:
    """Ask the backend for a condition's risk factors, once per condition.

    A cache hit never touches the backend, so offline reruns stay cheap and
    reproducible.
    """
    if cache is not None:
        cached = cache.get(condition)
        if cached is not None:
            return cached
    prompt = RISK_FACTOR_PROMPT.replace("{condition}", condition)
    started = time.perf_counter()
    completion = complete(CompletionRequest(prompt=prompt, max_new_tokens=128), backend)
    factors = _parse_factor_csv(completion.text)
    if record is not None:
        record.log(
            step="fetch_risk_factors",
            prompt_text=prompt,
            raw_completion=completion.text,
            parsed_result=factors,
            wall_time=time.perf_counter() - started,
            condition=condition,
        )
    if not factors:
        raise BaselineError(f"backend returned no parseable risk factors for {condition!r}")
    if cache is not None:
        cache.put(condition, factors)
    return factors


def build_profile(
    condition: str,
    factors: Sequence[str],
    backend: EmbeddingBackend,
) -> RiskFactorProfile:
    if not factors:
        raise BaselineError(f"cannot build a profile with no factors for {condition!r}")
    query_sentence = f"Risk factors of {condition} include {', '.join(factors)}"
    vector = embed([query_sentence], backend)[0]
    if vector.is_zero():
        raise BaselineError(f"query sentence embedded to a zero vector for {condition!r}")
    return RiskFactorProfile(
        condition=condition,
        factors=tuple(factors),
        query_sentence=query_sentence,
        query_vector=vector,
    )


def retrieve_topk(
    notes: Sequence[Note],
    profile: RiskFactorProfile,
    config: BaselineConfig | None = None,
    backend: EmbeddingBackend | None = None,
) -> list[EvidenceItem]:
    """Rank all candidate sentences by cosine against the profile, keep top k.

    Candidates must meet the minimum token length (drops headers and stray
    fragments). Ties break by note timestamp, then note id, then sentence
    index, so equal scores cannot reorder between runs. Fewer than k
    candidates simply yields fewer items.
    """
    if config is None:
        config = BaselineConfig()
    if backend is None:
        raise ValueError("retrieve_topk requires an embedding backend")
    if not notes:
        return []

    candidates: list[tuple[Note, int, str]] = []
    for note in notes:
        for sent in note.sentences:
            if count_tokens(sent.text) >= config.min_sentence_tokens:
                candidates.append((note, sent.index, sent.text))
    if not candidates:
        return []

    vectors = embed([text for _, _, text in candidates], backend)

    epoch = datetime.fromtimestamp(0, tz=timezone.utc)
    scored: list[tuple[float, datetime, str, int, Note, str]] = []
    for (note, sent_index, text), vector in zip(candidates, vectors):
        if vector.is_zero():
            continue
        score = cosine(profile.query_vector, vector)
        scored.append((score, note.timestamp or epoch, note.note_id, sent_index, note, text))

    scored.sort(key=lambda row: (-row[0], row[1], row[2], row[3]))

    items: list[EvidenceItem] = []
    for score, _, note_id, sent_index, note, text in scored[: config.k]:
        items.append(
            EvidenceItem(
                id=evidence_id(
                    note.patient_id,
                    profile.condition,
                    QueryKind.RISK,
                    EvidenceSource.EXTRACTED_BASELINE,
                    text,
                    extra=f"{note_id}:{sent_index}",
                ),
                patient_id=note.patient_id,
                condition=profile.condition,
                kind=QueryKind.RISK,
                source=EvidenceSource.EXTRACTED_BASELINE,
                text=text,
                source_note_id=note_id,
                # The item is the sentence itself, so it is its own highlight.
                highlights=(Highlight(note_id=note_id, sentence_index=sent_index, score=1.0),),
                score=score,
            )
        )
    return items
