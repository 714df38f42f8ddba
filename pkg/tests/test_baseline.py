from __future__ import annotations

import json
import random

import pytest

from evscout.baseline import (
    BaselineConfig,
    BaselineError,
    RISK_FACTOR_PROMPT,
    RiskFactorCache,
    build_profile,
    fetch_risk_factors,
    retrieve_topk,
)
from evscout.embedding import HashedEmbedder, cosine, embed
from evscout.model import EvidenceSource, QueryKind, RunRecord
from evscout.text_prep import count_tokens
from helpers import make_note, rule, scripted


def _factor_backend(text="hypertension, smoking, diabetes."):
    return scripted(rule("List the risk factors of", text))


def test_fetch_risk_factors_parses_csv_and_logs():
    record = RunRecord(run_id="r1")
    backend = _factor_backend("Hypertension, atrial fibrillation,  Smoking , diabetes.")
    factors = fetch_risk_factors("stroke", backend, record=record)
    assert factors == ["hypertension", "atrial fibrillation", "smoking", "diabetes"]
    entry = record.entries[0]
    assert entry.step == "fetch_risk_factors"
    assert entry.prompt_text == RISK_FACTOR_PROMPT.replace("{condition}", "stroke")
    assert entry.parsed_result == factors
    assert dict(entry.context)["condition"] == "stroke"


def test_fetch_risk_factors_cache_hit_skips_backend(tmp_path):
    cache = RiskFactorCache(tmp_path / "factors.jsonl")
    backend = _factor_backend()
    first = fetch_risk_factors("stroke", backend, cache=cache)
    assert backend.calls == 1
    second = fetch_risk_factors("stroke", backend, cache=cache)
    assert second == first
    assert backend.calls == 1  # the cache answered

    # a different condition misses the cache and goes back to the backend
    fetch_risk_factors("sepsis", backend, cache=cache)
    assert backend.calls == 2


def test_risk_factor_cache_last_entry_wins(tmp_path):
    cache = RiskFactorCache(tmp_path / "factors.jsonl")
    cache.put("stroke", ["old factor"])
    cache.put("stroke", ["new factor"])
    assert cache.get("stroke") == ["new factor"]
    assert cache.get("unseen") is None
    rows = [
        json.loads(ln)
        for ln in (tmp_path / "factors.jsonl").read_text(encoding="utf-8").splitlines()
    ]
    assert all("fetched_at" in row for row in rows)


def test_fetch_risk_factors_empty_response_is_an_error():
    backend = _factor_backend(" , , ")
    with pytest.raises(BaselineError, match="no parseable risk factors"):
        fetch_risk_factors("stroke", backend)


def test_build_profile_query_sentence():
    profile = build_profile("stroke", ["hypertension", "smoking"], HashedEmbedder())
    assert profile.query_sentence == "Risk factors of stroke include hypertension, smoking"
    assert profile.factors == ("hypertension", "smoking")
    assert profile.query_vector.norm == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(BaselineError, match="no factors"):
        build_profile("stroke", [], HashedEmbedder())


def test_baseline_config_validation():
    with pytest.raises(ValueError):
        BaselineConfig(k=0)
    with pytest.raises(ValueError):
        BaselineConfig(min_sentence_tokens=-1)


_VOCAB = (
    "patient stable afebrile ambulating tolerating diet medication adjusted "
    "hypertension diabetes smoking history noted lungs clear cardiac exam "
    "unremarkable follow up scheduled renal function improving labs pending "
    "neuro intact oriented denies pain headache dizziness vision changes"
).split()


def _sentence(rng, n_words):
    return " ".join(rng.choice(_VOCAB) for _ in range(n_words)).capitalize() + "."


def _big_note_set(rng, n_notes=12, sentences_per_note=20):
    notes = []
    for i in range(n_notes):
        text = " ".join(_sentence(rng, rng.randint(2, 9)) for _ in range(sentences_per_note))
        notes.append(make_note(note_id=f"n{i:02d}", hours=float(i), text=text))
    return notes


def oracle_topk(notes, profile, config, backend):
    """Brute force: embed every candidate, full sort, slice."""
    rows = []
    for note in notes:
        for sent in note.sentences:
            if count_tokens(sent.text) < config.min_sentence_tokens:
                continue
            vec = embed([sent.text], backend)[0]
            if vec.is_zero():
                continue
            rows.append(
                (
                    cosine(profile.query_vector, vec),
                    note.timestamp,
                    note.note_id,
                    sent.index,
                    sent.text,
                )
            )
    rows.sort(key=lambda r: (-r[0], r[1], r[2], r[3]))
    return rows[: config.k]


def test_retrieve_topk_matches_exhaustive_oracle():
    rng = random.Random(17)
    notes = _big_note_set(rng)  # 240 candidate sentences
    backend = HashedEmbedder()
    profile = build_profile("stroke", ["hypertension", "smoking", "diabetes"], backend)
    config = BaselineConfig()
    items = retrieve_topk(notes, profile, config, backend)
    expected = oracle_topk(notes, profile, config, backend)

    assert len(items) == config.k
    assert [(i.score, i.source_note_id, i.highlights[0].sentence_index) for i in items] == [
        (pytest.approx(score, abs=1e-12), note_id, sent_index)
        for score, _, note_id, sent_index, _ in expected
    ]
    assert [i.text for i in items] == [text for *_, text in expected]


def test_retrieve_topk_items_are_verbatim_sentences():
    rng = random.Random(19)
    notes = _big_note_set(rng, n_notes=4)
    backend = HashedEmbedder()
    profile = build_profile("stroke", ["hypertension"], backend)
    items = retrieve_topk(notes, profile, BaselineConfig(k=10), backend)
    by_id = {n.note_id: n for n in notes}
    for item in items:
        source = by_id[item.source_note_id]
        sentence_texts = [s.text for s in source.sentences]
        assert item.text in sentence_texts  # extractive: never paraphrased
        assert item.source is EvidenceSource.EXTRACTED_BASELINE
        assert item.kind is QueryKind.RISK
        highlight = item.highlights[0]
        assert highlight.note_id == item.source_note_id
        assert highlight.score == 1.0
        assert source.sentences[highlight.sentence_index].text == item.text


def test_retrieve_topk_underfull_and_filters():
    backend = HashedEmbedder()
    profile = build_profile("stroke", ["hypertension"], backend)
    notes = [
        make_note(
            note_id="n1",
            text="Hypertension history noted. Ok. Lungs clear on exam today.",
        )
    ]
    items = retrieve_topk(notes, profile, BaselineConfig(k=20), backend)
    # "Ok." is below the minimum sentence length, the other two make it
    assert len(items) == 2
    assert all(count_tokens(i.text) >= 3 for i in items)
    assert retrieve_topk([], profile, BaselineConfig(), backend) == []

    shorties = [make_note(note_id="n2", text="Ok. Fine. Up.")]
    assert retrieve_topk(shorties, profile, BaselineConfig(), backend) == []


def test_retrieve_topk_requires_backend():
    profile = build_profile("stroke", ["hypertension"], HashedEmbedder())
    with pytest.raises(ValueError, match="embedding backend"):
        retrieve_topk([make_note()], profile, BaselineConfig())


def test_retrieve_topk_tie_break_is_reproducible():
    backend = HashedEmbedder()
    profile = build_profile("stroke", ["hypertension"], backend)
    # Identical sentence in two notes: identical score, order fixed by
    # (timestamp, note_id, sentence index).
    late = make_note(note_id="na", hours=5.0, text="Hypertension history noted.")
    early = make_note(note_id="nb", hours=1.0, text="Hypertension history noted.")
    items = retrieve_topk([late, early], profile, BaselineConfig(k=5), backend)
    assert [i.source_note_id for i in items] == ["nb", "na"]
    again = retrieve_topk([early, late], profile, BaselineConfig(k=5), backend)
    assert [i.source_note_id for i in again] == ["nb", "na"]
    assert [i.id for i in again] == [i.id for i in items]
