from __future__ import annotations

import random
import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evscout.text_prep import (
    Chunk,
    ChunkingConfig,
    ChunkingError,
    TokenizerMode,
    chunk_note,
    count_tokens,
    split_sentences,
    token_spans,
)
from helpers import make_note

# Independent oracle for the token rule: a token is a maximal run of
# alphanumerics or a maximal run of other non-space characters.
_ORACLE_TOKEN_RE = re.compile(r"[A-Za-z0-9]+|[^A-Za-z0-9\s]+")


def oracle_token_count(text: str) -> int:
    count = 0
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        is_alnum = ch.isalnum() and ch.isascii()
        j = i
        while j < n and not text[j].isspace() and (text[j].isalnum() and text[j].isascii()) == is_alnum:
            j += 1
        count += 1
        i = j
    return count


def test_split_empty():
    assert split_sentences("") == []
    assert split_sentences("   \n  ") == []


def test_split_two_sentences_spans_slice_back():
    text = "Pt stable. No acute distress."
    sents = split_sentences(text, note_id="n1")
    assert [s.text for s in sents] == ["Pt stable.", "No acute distress."]
    assert [s.char_span for s in sents] == [(0, 10), (11, 29)]
    for s in sents:
        assert text[s.start : s.end] == s.text


def test_split_on_newline_only():
    sents = split_sentences("HR 80\nBP 120/80")
    assert [s.text for s in sents] == ["HR 80", "BP 120/80"]


def test_split_question_and_exclamation():
    sents = split_sentences("Any pain? None reported! Stable.")
    assert [s.text for s in sents] == ["Any pain?", "None reported!", "Stable."]


def test_split_guards_abbreviations_and_initials():
    sents = split_sentences("Seen by Dr. Smith today. Continue meds b.i.d. as before.")
    assert [s.text for s in sents] == [
        "Seen by Dr. Smith today.",
        "Continue meds b.i.d. as before.",
    ]
    sents = split_sentences("Reviewed by J. Doe. Plan unchanged.")
    assert [s.text for s in sents] == ["Reviewed by J. Doe.", "Plan unchanged."]


def test_split_guards_ordinals():
    sents = split_sentences("1. check labs 2. start antibiotics")
    assert len(sents) == 1


def test_split_keeps_closing_quote_with_sentence():
    text = 'He said "stop." Then left.'
    sents = split_sentences(text)
    assert [s.text for s in sents] == ['He said "stop."', "Then left."]


def test_split_multi_terminal_run_not_guarded():
    sents = split_sentences("Improving... Still febrile.")
    assert [s.text for s in sents] == ["Improving...", "Still febrile."]


def test_split_indices_are_sequential():
    sents = split_sentences("One. Two. Three.")
    assert [s.index for s in sents] == [0, 1, 2]


def test_split_idempotent_on_own_outputs():
    text = "Pt stable. No acute distress.\nHR 80. Dr. Smith notified."
    for sent in split_sentences(text):
        again = split_sentences(sent.text)
        assert [s.text for s in again] == [sent.text]


@given(st.text(max_size=400))
def test_split_partitions_non_whitespace(text):
    sents = split_sentences(text)
    # Spans are ordered, non-overlapping, and every non-whitespace character
    # of the input falls inside exactly one span.
    prev_end = 0
    covered = []
    for s in sents:
        assert s.start >= prev_end
        assert s.start < s.end
        assert text[s.start : s.end] == s.text
        assert not s.text[0].isspace() and not s.text[-1].isspace()
        covered.append((s.start, s.end))
        prev_end = s.end
    outside = []
    spans = iter(covered)
    current = next(spans, None)
    for i, ch in enumerate(text):
        while current and i >= current[1]:
            current = next(spans, None)
        inside = current is not None and current[0] <= i < current[1]
        if not inside and not ch.isspace():
            outside.append(i)
    assert outside == []


def test_count_tokens_basic():
    assert count_tokens("") == 0
    assert count_tokens("risk of stroke") == 3
    # s/p -> s, /, p; CABG, -> CABG ,; on Coumadin -> 2
    assert count_tokens("s/p CABG, on Coumadin") == oracle_token_count("s/p CABG, on Coumadin")
    assert count_tokens("s/p CABG, on Coumadin") == 7


@given(st.text(max_size=300))
def test_count_tokens_matches_oracle(text):
    assert count_tokens(text) == oracle_token_count(text)


def test_token_spans_cover_tokens():
    text = "s/p CABG, on Coumadin"
    spans = token_spans(text)
    assert [text[a:b] for a, b in spans] == ["s", "/", "p", "CABG", ",", "on", "Coumadin"]


class _TokenizingBackend:
    backend_id = "with-tokenizer"

    def count_tokens(self, text: str) -> int | None:
        return len(text.split()) * 2


class _NoTokenizerBackend:
    backend_id = "without-tokenizer"

    def count_tokens(self, text: str) -> int | None:
        return None


def test_count_tokens_backend_supplied_and_fallback(caplog):
    config = ChunkingConfig(tokenizer=TokenizerMode.BACKEND_SUPPLIED)
    assert count_tokens("a b c", config, _TokenizingBackend()) == 6
    with caplog.at_level("WARNING"):
        n = count_tokens("a b c", config, _NoTokenizerBackend())
    assert n == 3


def test_chunking_config_validation():
    with pytest.raises(ValueError):
        ChunkingConfig(token_budget=0)


def test_chunk_note_empty():
    assert chunk_note(make_note(text=""), 100) == []


def test_chunk_note_single_chunk_when_short():
    note = make_note(text="Pt stable. No acute distress.")
    chunks = chunk_note(note, 100, ChunkingConfig(token_budget=750))
    assert len(chunks) == 1
    assert chunks[0].sentence_range == (0, len(note.sentences) - 1)
    assert chunks[0].text == note.text


def test_chunk_note_greedy_packing_boundaries():
    # 10 sentences x 100 tokens each; overhead 150 of budget 750 leaves room
    # for 600 tokens, i.e. six sentences per chunk.
    sentence = " ".join(f"w{i}" for i in range(99)) + "."
    assert count_tokens(sentence) == 100
    note = make_note(text="\n".join([sentence] * 10))
    chunks = chunk_note(note, 150, ChunkingConfig(token_budget=750))
    assert [c.sentence_range for c in chunks] == [(0, 5), (6, 9)]
    assert [c.chunk_index for c in chunks] == [0, 1]


def test_chunk_note_budget_exhausted():
    note = make_note(text="Pt stable.")
    with pytest.raises(ChunkingError, match="budget exhausted by template"):
        chunk_note(note, 750, ChunkingConfig(token_budget=750))


def test_chunk_note_hard_splits_oversized_sentence():
    words = " ".join(f"w{i}" for i in range(50))
    note = make_note(text=words)  # one 50-token sentence, no terminal punctuation
    chunks = chunk_note(note, 10, ChunkingConfig(token_budget=30))
    assert all(c.sentence_range == (0, 0) for c in chunks)
    assert [c.piece for c in chunks] == [0, 1, 2]
    assert [c.token_count for c in chunks] == [20, 20, 10]
    joined = [t for c in chunks for t in _ORACLE_TOKEN_RE.findall(c.text)]
    assert joined == _ORACLE_TOKEN_RE.findall(note.sentences[0].text)


def _random_note_text(rng: random.Random, max_tokens: int) -> str:
    vocab = ["pt", "stable", "pain", "hr", "80", "bp", "120/80", "mg", "daily", "left", "s/p",
             "ct", "head", "wnl", "continue", "monitor", "afebrile", "alert", "oriented"]
    parts = []
    total = 0
    while total < max_tokens:
        length = rng.randint(1, 30)
        words = [rng.choice(vocab) for _ in range(length)]
        terminal = rng.choice([". ", "? ", "! ", "\n", ".\n"])
        parts.append(" ".join(words) + terminal)
        total += length + 1
    return "".join(parts)


def chunking_invariants(note, overhead: int, config: ChunkingConfig) -> None:
    """Assert budget, coverage, order, and no overlap for one note's chunks."""
    chunks = chunk_note(note, overhead, config)
    sentences = note.sentences
    if not sentences:
        assert chunks == []
        return
    # Budget holds for every chunk, hard-split pieces included.
    for chunk in chunks:
        assert overhead + count_tokens(chunk.text, config) <= config.token_budget
        assert chunk.token_count == count_tokens(chunk.text, config)
    # Chunk indices are consecutive from zero.
    assert [c.chunk_index for c in chunks] == list(range(len(chunks)))
    # Sentence coverage: in order, no gaps, no overlap; hard-split pieces are
    # consecutive and numbered from zero.
    expected_next = 0
    i = 0
    while i < len(chunks):
        chunk = chunks[i]
        first, last = chunk.sentence_range
        assert first == expected_next
        if chunk.piece is not None:
            assert first == last
            pieces = [chunk]
            while i + 1 < len(chunks) and chunks[i + 1].piece is not None and chunks[i + 1].sentence_range == (first, first):
                i += 1
                pieces.append(chunks[i])
            assert [p.piece for p in pieces] == list(range(len(pieces)))
            got = [t for p in pieces for t in _ORACLE_TOKEN_RE.findall(p.text)]
            assert got == _ORACLE_TOKEN_RE.findall(sentences[first].text)
        else:
            assert first <= last
            assert chunk.text == note.text[sentences[first].start : sentences[last].end]
        expected_next = last + 1
        i += 1
    assert expected_next == len(sentences)


def test_chunk_note_random_invariants():
    rng = random.Random(91)
    for case in range(200):
        max_tokens = rng.choice([0, 5, 40, 200, 900])
        note = make_note(note_id=f"rn{case}", text=_random_note_text(rng, max_tokens))
        overhead = rng.choice([0, 50, 150])
        budget = rng.choice([80, 300, 750])
        if budget - overhead <= 0:
            continue
        chunking_invariants(note, overhead, ChunkingConfig(token_budget=budget))


@settings(max_examples=60, deadline=None)
@given(st.text(max_size=500), st.integers(min_value=1, max_value=40))
def test_chunk_note_hypothesis_budget_and_coverage(text, available):
    note = make_note(text=text)
    chunking_invariants(note, 10, ChunkingConfig(token_budget=10 + available))
