"""Embedding backends, cosine similarity, and sentence highlight matching.

The mock embedder hashes bag-of-words n-grams into a fixed-width signed
vector, giving identical texts identical embeddings with no network access.
A wire backend covers real embedding servers behind a one-route JSON API.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
import re
import time
from dataclasses import dataclass
from typing import Any, Sequence

import requests

from .llm import BackendError, RetryExhausted
from .model import Highlight, Note

__all__ = [
    "Vector",
    "HighlightConfig",
    "EmbeddingBackend",
    "HashedEmbedder",
    "WireEmbedder",
    "embed",
    "cosine",
    "match_highlights",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Vector:
    values: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.values)

    @property
    def norm(self) -> float:
        return math.sqrt(math.fsum(v * v for v in self.values))

    def is_zero(self) -> bool:
        return all(v == 0.0 for v in self.values)


@dataclass(frozen=True)
class HighlightConfig:
    threshold: float = 0.9

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError(f"threshold must be in (0, 1], got {self.threshold}")


def cosine(u: Vector, v: Vector) -> float:
    if u.dim != v.dim:
        raise ValueError(f"dimension mismatch: {u.dim} vs {v.dim}")
    nu, nv = u.norm, v.norm
    if nu == 0.0 or nv == 0.0:
        raise ValueError("undefined similarity for a zero vector")
    value = math.fsum(a * b for a, b in zip(u.values, v.values)) / (nu * nv)
    return max(-1.0, min(1.0, value))


class EmbeddingBackend:
    backend_id: str = "embedding"

    def embed(self, texts: Sequence[str]) -> list[Vector]:
        raise NotImplementedError

    def fingerprint(self) -> str:
        return self.backend_id


_WORD_RE = re.compile(r"[a-z0-9]+")


class HashedEmbedder(EmbeddingBackend):
    """Deterministic mock: signed feature hashing of word uni- and bigrams.

    Vectors are L2-normalized; a text with no alphanumeric content maps to
    the zero vector (callers treat that as "no signal", not an error).
    """

    def __init__(self, dim: int = 512):
        if dim < 8:
            raise ValueError("dim must be >= 8")
        self.dim = dim
        self.backend_id = f"hashed-embedder-{dim}"

    def embed(self, texts: Sequence[str]) -> list[Vector]:
        return [self._embed_one(t) for t in texts]

    def _embed_one(self, text: str) -> Vector:
        words = _WORD_RE.findall(text.lower())
        grams = list(words)
        grams.extend(f"{a} {b}" for a, b in zip(words, words[1:]))
        acc = [0.0] * self.dim
        for gram in grams:
            h = int.from_bytes(hashlib.sha256(gram.encode("utf-8")).digest()[:8], "big")
            sign = -1.0 if (h >> 63) & 1 else 1.0
            acc[h % self.dim] += sign
        norm = math.sqrt(math.fsum(v * v for v in acc))
        if norm == 0.0:
            return Vector(values=tuple(acc))
        return Vector(values=tuple(v / norm for v in acc))


class WireEmbedder(EmbeddingBackend):
    """Client for a single-route embedding server: POST {base_url}/embed."""

    def __init__(
        self,
        base_url: str,
        timeout_s: float = 60.0,
        max_retries: int = 3,
        backoff_base_s: float = 0.5,
        batch_size: int = 256,
        backend_id: str | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self.backoff_base_s = backoff_base_s
        self.batch_size = batch_size
        self.backend_id = backend_id or f"wire-embed:{base_url}"

    @classmethod
    def from_env(cls, **kwargs: Any) -> "WireEmbedder":
        url = os.environ.get("EVSCOUT_EMBED_URL")
        if not url:
            raise ValueError("EVSCOUT_EMBED_URL is not set")
        return cls(base_url=url, **kwargs)

    def embed(self, texts: Sequence[str]) -> list[Vector]:
        vectors: list[Vector] = []
        for start in range(0, len(texts), self.batch_size):
            vectors.extend(self._embed_batch(texts[start : start + self.batch_size]))
        return vectors

    def _embed_batch(self, texts: Sequence[str]) -> list[Vector]:
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                response = requests.post(
                    f"{self.base_url}/embed",
                    json={"texts": list(texts)},
                    timeout=self.timeout_s,
                )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff_base_s * (2**attempt))
                continue
            if not 200 <= response.status_code < 300:
                raise BackendError(response.status_code, response.text[:500])
            try:
                rows = response.json()["vectors"]
                return [Vector(values=tuple(float(x) for x in row)) for row in rows]
            except (ValueError, KeyError, TypeError) as exc:
                raise BackendError(response.status_code, f"malformed embedding payload: {exc}")
        raise RetryExhausted(f"{self.max_retries + 1} attempts failed: {last_error}")


def embed(texts: Sequence[str], backend: EmbeddingBackend) -> list[Vector]:
    """Embed texts in order, enforcing the non-empty input contract."""
    if not texts:
        raise ValueError("embed requires at least one text")
    for i, text in enumerate(texts):
        if not isinstance(text, str) or not text:
            raise ValueError(f"embed requires non-empty strings; index {i} is empty")
    vectors = backend.embed(texts)
    if len(vectors) != len(texts):
        raise BackendError(0, f"embedding count mismatch: {len(vectors)} for {len(texts)} texts")
    dims = {v.dim for v in vectors}
    if len(dims) > 1:
        raise BackendError(0, f"inconsistent embedding dimensions: {sorted(dims)}")
    return vectors


def match_highlights(
    evidence_text: str,
    note: Note,
    config: HighlightConfig | None = None,
    backend: EmbeddingBackend | None = None,
) -> list[Highlight]:
    """Find note sentences whose embedding is close to the evidence text.

    Returns highlights with cosine >= threshold, sorted by score descending
    then sentence index ascending. Empty results are normal: abstract
    evidence often has no near-verbatim support sentence.
    """
    config = config or HighlightConfig()
    backend = backend or HashedEmbedder()
    sentences = note.sentences
    if not sentences or not evidence_text.strip():
        return []
    vectors = embed([evidence_text] + [s.text for s in sentences], backend)
    evidence_vec = vectors[0]
    if evidence_vec.is_zero():
        return []
    scored: list[Highlight] = []
    for sent, vec in zip(sentences, vectors[1:]):
        if vec.is_zero():
            continue
        score = cosine(evidence_vec, vec)
        if score >= config.threshold:
            scored.append(Highlight(note_id=note.note_id, sentence_index=sent.index, score=score))
    scored.sort(key=lambda h: (-h.score, h.sentence_index))
    return scored
