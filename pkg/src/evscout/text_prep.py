"""Sentence splitting, approximate token counting, and note chunking.

Notes are packed into chunks of whole sentences so that chunk text plus the
prompt template stays within a fixed token budget. The token counter is a
cheap approximation (whitespace pieces further split at punctuation
boundaries); a backend-supplied counter can replace it when available.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

from .model import Note, Sentence

if TYPE_CHECKING:  # pragma: no cover
    from .llm import CompletionBackend

__all__ = [
    "TokenizerMode",
    "ChunkingConfig",
    "Chunk",
    "ChunkingError",
    "split_sentences",
    "count_tokens",
    "token_spans",
    "chunk_note",
]

log = logging.getLogger(__name__)


class ChunkingError(ValueError):
    pass


class TokenizerMode(str, Enum):
    APPROXIMATE = "approximate"
    BACKEND_SUPPLIED = "backend_supplied"


@dataclass(frozen=True)
class ChunkingConfig:
    token_budget: int = 750
    tokenizer: TokenizerMode = TokenizerMode.APPROXIMATE

    def __post_init__(self) -> None:
        if self.token_budget < 1:
            raise ValueError(f"token_budget must be >= 1, got {self.token_budget}")


@dataclass(frozen=True)
class Chunk:
    """A contiguous run of note sentences (or one piece of a hard-split sentence)."""

    note_id: str
    chunk_index: int
    sentence_range: tuple[int, int]
    text: str
    token_count: int
    # None for whole-sentence chunks; 0, 1, ... for pieces of one oversized
    # sentence split at token boundaries.
    piece: int | None = None


# Periods after these tokens do not end a sentence. Clinical shorthand keeps
# this list longer than prose would need.
_ABBREVIATIONS = {
    "dr.", "mr.", "mrs.", "ms.", "st.", "jr.", "sr.", "prof.",
    "vs.", "e.g.", "i.e.", "etc.", "cf.", "approx.", "est.",
    "no.", "neg.", "pos.", "pt.", "pts.", "hx.", "fx.", "tx.", "dx.", "rx.",
    "a.m.", "p.m.", "b.i.d.", "t.i.d.", "q.d.", "q.i.d.", "p.r.n.", "p.o.",
}

_TERMINALS = ".?!"
_CLOSERS = "\"')]"

_SINGLE_INITIAL = re.compile(r"[A-Za-z]\.")
_ORDINAL = re.compile(r"\d+\.")


def _guarded(text: str, period_index: int) -> bool:
    """True when the period at period_index should not end a sentence."""
    j = period_index
    while j > 0 and not text[j - 1].isspace():
        j -= 1
    token = text[j : period_index + 1].lstrip("\"'([{")
    if token.lower() in _ABBREVIATIONS:
        return True
    if _SINGLE_INITIAL.fullmatch(token):
        return True
    if _ORDINAL.fullmatch(token):
        return True
    return False


def split_sentences(text: str, note_id: str = "") -> list[Sentence]:
    """Split text into sentences with character spans into the input.

    Boundaries are newlines and terminal punctuation followed by whitespace,
    with guards for abbreviations, initials, and list ordinals. Spans are
    trimmed of surrounding whitespace, so slicing the input by a span yields
    the sentence text exactly, and every non-whitespace character belongs to
    exactly one sentence.
    """
    raw_segments: list[tuple[int, int]] = []
    n = len(text)
    seg_start = 0
    i = 0
    while i < n:
        ch = text[i]
        if ch == "\n":
            raw_segments.append((seg_start, i))
            seg_start = i + 1
            i += 1
            continue
        if ch in _TERMINALS:
            k = i
            while k < n and text[k] in _TERMINALS:
                k += 1
            punct_run = k - i
            while k < n and text[k] in _CLOSERS:
                k += 1
            at_break = k >= n or text[k].isspace()
            if at_break and not (punct_run == 1 and text[i] == "." and _guarded(text, i)):
                raw_segments.append((seg_start, k))
                seg_start = k
            i = k
            continue
        i += 1
    raw_segments.append((seg_start, n))

    sentences: list[Sentence] = []
    for start, end in raw_segments:
        while start < end and text[start].isspace():
            start += 1
        while end > start and text[end - 1].isspace():
            end -= 1
        if start >= end:
            continue
        sentences.append(
            Sentence(note_id=note_id, index=len(sentences), text=text[start:end], start=start, end=end)
        )
    return sentences


# A token is a run of alphanumerics or a run of other non-space characters,
# so "s/p" counts as three and "CABG," as two.
_TOKEN_RE = re.compile(r"[A-Za-z0-9]+|[^A-Za-z0-9\s]+")

_warned_backends: set[str] = set()


def token_spans(text: str) -> list[tuple[int, int]]:
    return [(m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def count_tokens(
    text: str,
    config: ChunkingConfig | None = None,
    backend: "CompletionBackend | None" = None,
) -> int:
    mode = config.tokenizer if config is not None else TokenizerMode.APPROXIMATE
    if mode is TokenizerMode.BACKEND_SUPPLIED and backend is not None:
        n = backend.count_tokens(text)
        if n is not None:
            return n
        if backend.backend_id not in _warned_backends:
            _warned_backends.add(backend.backend_id)
            log.warning(
                "backend %s supplies no tokenizer; falling back to approximate counting",
                backend.backend_id,
            )
    return sum(1 for _ in _TOKEN_RE.finditer(text))


def _hard_split(sent: Sentence, max_tokens: int) -> list[tuple[str, int]]:
    """Split one oversized sentence at token boundaries into (text, count) pieces."""
    spans = token_spans(sent.text)
    pieces: list[tuple[str, int]] = []
    for group_start in range(0, len(spans), max_tokens):
        group = spans[group_start : group_start + max_tokens]
        piece = sent.text[group[0][0] : group[-1][1]]
        pieces.append((piece, len(group)))
    return pieces


def chunk_note(
    note: Note,
    prompt_overhead_tokens: int,
    config: ChunkingConfig | None = None,
    backend: "CompletionBackend | None" = None,
) -> list[Chunk]:
    """Greedily pack whole sentences into chunks within the token budget.

    The budget covers the prompt template too, so chunk text may use at most
    token_budget - prompt_overhead_tokens tokens. A single sentence that
    exceeds that allowance on its own is hard-split at token boundaries; each
    resulting piece satisfies the bound by itself.
    """
    config = config or ChunkingConfig()
    if prompt_overhead_tokens < 0:
        raise ValueError("prompt_overhead_tokens must be >= 0")
    available = config.token_budget - prompt_overhead_tokens
    if available <= 0:
        raise ChunkingError(
            f"budget exhausted by template: overhead {prompt_overhead_tokens} leaves no room "
            f"in budget {config.token_budget}"
        )

    def tokens(text: str) -> int:
        return count_tokens(text, config, backend)

    chunks: list[Chunk] = []
    current: list[int] = []
    current_tokens = 0

    def flush() -> None:
        nonlocal current, current_tokens
        if not current:
            return
        first, last = current[0], current[-1]
        text = note.text[note.sentences[first].start : note.sentences[last].end]
        chunks.append(
            Chunk(
                note_id=note.note_id,
                chunk_index=len(chunks),
                sentence_range=(first, last),
                text=text,
                token_count=tokens(text),
            )
        )
        current = []
        current_tokens = 0

    for idx, sent in enumerate(note.sentences):
        n_tokens = tokens(sent.text)
        if n_tokens > available:
            flush()
            for piece_no, (piece_text, piece_tokens) in enumerate(_hard_split(sent, available)):
                chunks.append(
                    Chunk(
                        note_id=note.note_id,
                        chunk_index=len(chunks),
                        sentence_range=(idx, idx),
                        text=piece_text,
                        token_count=piece_tokens,
                        piece=piece_no,
                    )
                )
            continue
        if current and current_tokens + n_tokens > available:
            flush()
        current.append(idx)
        current_tokens += n_tokens
    flush()
    return chunks
