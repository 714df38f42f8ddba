"""Completion backends and the small gateway shared by every prompting stage.

Two backends speak the same interface: a wire client for OpenAI-style
completion servers and a scripted mock that replays canned responses for
hermetic tests. Binary-answer parsing and length-normalized sequence
confidence live here because every caller needs them.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence, TypeVar

import requests

__all__ = [
    "BackendError",
    "RetryExhausted",
    "ScriptMiss",
    "CompletionRequest",
    "Completion",
    "BinaryValue",
    "BinaryAnswer",
    "CompletionBackend",
    "WireBackend",
    "ScriptedBackend",
    "ScriptRule",
    "complete",
    "parse_binary",
    "sequence_confidence",
    "parallel_map_ordered",
]

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class BackendError(RuntimeError):
    """Non-2xx response from a completion or embedding server."""

    def __init__(self, status: int, message: str):
        super().__init__(f"backend returned {status}: {message}")
        self.status = status
        self.message = message


class RetryExhausted(RuntimeError):
    """Transient wire failures persisted beyond the retry budget."""


class ScriptMiss(LookupError):
    """A prompt reached the scripted backend that no rule matches."""

    def __init__(self, prompt: str):
        self.prompt_digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:12]
        head = prompt[:80].replace("\n", "\\n")
        super().__init__(f"no script rule matches prompt {self.prompt_digest} ({head!r}...)")


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    max_new_tokens: int = 256
    temperature: float = 0.0
    want_logprobs: bool = False
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")


@dataclass(frozen=True)
class Completion:
    text: str
    token_logprobs: tuple[tuple[str, float], ...] | None
    backend_id: str
    latency_ms: float

    def __post_init__(self) -> None:
        if self.token_logprobs is not None:
            if not self.token_logprobs:
                raise ValueError("token_logprobs must be non-empty when present")
            for token, lp in self.token_logprobs:
                if lp > 0:
                    raise ValueError(f"log-probability above zero for token {token!r}: {lp}")


class BinaryValue(str, Enum):
    YES = "yes"
    NO = "no"
    UNPARSEABLE = "unparseable"


@dataclass(frozen=True)
class BinaryAnswer:
    value: BinaryValue
    raw: str

    @property
    def is_yes(self) -> bool:
        return self.value is BinaryValue.YES


_FIRST_WORD_RE = re.compile(r"[A-Za-z]+")


def parse_binary(text: str) -> BinaryAnswer:
    """Map a completion to yes/no by its first alphabetic word, else unparseable."""
    m = _FIRST_WORD_RE.search(text)
    word = m.group(0).lower() if m else ""
    if word == "yes":
        value = BinaryValue.YES
    elif word == "no":
        value = BinaryValue.NO
    else:
        value = BinaryValue.UNPARSEABLE
    return BinaryAnswer(value=value, raw=text)


def sequence_confidence(token_logprobs: Sequence[tuple[str, float]] | Sequence[float]) -> float:
    """exp of the mean token log-probability: the length-normalized likelihood.

    Accepts (token, logprob) pairs or bare log-probabilities.
    """
    if not token_logprobs:
        raise ValueError("sequence_confidence requires at least one token log-probability")
    values = [lp[1] if isinstance(lp, (tuple, list)) else float(lp) for lp in token_logprobs]
    return math.exp(math.fsum(values) / len(values))


class CompletionBackend:
    """Base class wiring bounded concurrency and rate limiting around _complete."""

    def __init__(
        self,
        backend_id: str,
        max_in_flight: int = 4,
        min_request_interval_s: float = 0.0,
    ):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.backend_id = backend_id
        self.max_in_flight = max_in_flight
        self.min_request_interval_s = min_request_interval_s
        self._gate = threading.Semaphore(max_in_flight)
        self._rate_lock = threading.Lock()
        self._last_request = 0.0

    def complete(self, request: CompletionRequest) -> Completion:
        with self._gate:
            self._throttle()
            return self._complete(request)

    def _throttle(self) -> None:
        if self.min_request_interval_s <= 0:
            return
        with self._rate_lock:
            now = time.monotonic()
            wait = self._last_request + self.min_request_interval_s - now
            if wait > 0:
                time.sleep(wait)
            self._last_request = time.monotonic()

    def _complete(self, request: CompletionRequest) -> Completion:
        raise NotImplementedError

    def count_tokens(self, text: str) -> int | None:
        """Backend tokenizer hook; None means the caller should approximate."""
        return None

    def fingerprint(self) -> str:
        """Stable identity used in run config snapshots and derived run ids."""
        return self.backend_id


class WireBackend(CompletionBackend):
    """Client for an OpenAI-style completions endpoint.

    POSTs {base_url}/v1/completions and reads choices[0]. Connection errors
    and timeouts are retried with exponential backoff; any non-2xx response
    is surfaced as BackendError without retry.
    """

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        model: str | None = None,
        timeout_s: float = 60.0,
        max_retries: int = 3,
        backoff_base_s: float = 0.5,
        backend_id: str | None = None,
        max_in_flight: int = 4,
        min_request_interval_s: float = 0.0,
    ):
        super().__init__(
            backend_id=backend_id or f"wire:{base_url}",
            max_in_flight=max_in_flight,
            min_request_interval_s=min_request_interval_s,
        )
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self.backoff_base_s = backoff_base_s

    @classmethod
    def from_env(cls, **kwargs: Any) -> "WireBackend":
        url = os.environ.get("EVSCOUT_LLM_URL")
        if not url:
            raise ValueError("EVSCOUT_LLM_URL is not set")
        return cls(base_url=url, api_key=os.environ.get("EVSCOUT_LLM_KEY"), **kwargs)

    def _complete(self, request: CompletionRequest) -> Completion:
        payload: dict[str, Any] = {
            "prompt": request.prompt,
            "max_tokens": request.max_new_tokens,
            "temperature": request.temperature,
        }
        if self.model:
            payload["model"] = self.model
        if request.want_logprobs:
            payload["logprobs"] = 1
        if request.stop_sequences:
            payload["stop"] = list(request.stop_sequences)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        started = time.perf_counter()
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                response = requests.post(
                    f"{self.base_url}/v1/completions",
                    json=payload,
                    headers=headers,
                    timeout=self.timeout_s,
                )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff_base_s * (2**attempt))
                continue
            if not 200 <= response.status_code < 300:
                raise BackendError(response.status_code, response.text[:500])
            return self._parse(response, started)
        raise RetryExhausted(f"{self.max_retries + 1} attempts failed: {last_error}")

    def _parse(self, response: requests.Response, started: float) -> Completion:
        try:
            body = response.json()
            choice = body["choices"][0]
            text = choice["text"]
            logprob_block = choice.get("logprobs")
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(response.status_code, f"malformed completion payload: {exc}")
        token_logprobs = None
        if logprob_block and logprob_block.get("token_logprobs"):
            tokens = logprob_block.get("tokens") or [""] * len(logprob_block["token_logprobs"])
            token_logprobs = tuple(
                (tok, float(lp))
                for tok, lp in zip(tokens, logprob_block["token_logprobs"])
                if lp is not None
            )
            if not token_logprobs:
                token_logprobs = None
        return Completion(
            text=text,
            token_logprobs=token_logprobs,
            backend_id=self.backend_id,
            latency_ms=(time.perf_counter() - started) * 1000.0,
        )


@dataclass(frozen=True)
class ScriptRule:
    mode: str  # exact | substring | regex
    pattern: str
    text: str
    token_logprobs: tuple[tuple[str, float], ...] | None = None

    def matches(self, prompt: str) -> bool:
        if self.mode == "exact":
            return prompt == self.pattern
        if self.mode == "substring":
            return self.pattern in prompt
        if self.mode == "regex":
            return re.search(self.pattern, prompt) is not None
        raise ValueError(f"unknown script match mode: {self.mode}")


class ScriptedBackend(CompletionBackend):
    """Deterministic mock: replays canned responses keyed by prompt matchers.

    Rules are checked in order and the first match wins, so specific rules
    belong above catch-alls. Identical requests always produce identical
    completions (latency is pinned to zero for that reason).
    """

    def __init__(
        self,
        rules: Iterable[ScriptRule],
        backend_id: str = "scripted",
        max_in_flight: int = 4,
        tokenizer: Callable[[str], int] | None = None,
    ):
        super().__init__(backend_id=backend_id, max_in_flight=max_in_flight)
        self.rules = list(rules)
        self.calls = 0
        self._calls_lock = threading.Lock()
        self._tokenizer = tokenizer
        self._fingerprint = hashlib.sha256(
            json.dumps(
                [[r.mode, r.pattern, r.text, r.token_logprobs] for r in self.rules],
                sort_keys=True,
                default=list,
            ).encode("utf-8")
        ).hexdigest()[:16]

    @classmethod
    def from_file(cls, path: str | Path, **kwargs: Any) -> "ScriptedBackend":
        rules = []
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rules.append(_rule_from_dict(json.loads(line)))
                except (ValueError, KeyError) as exc:
                    raise ValueError(f"{path}:{line_no}: bad script rule: {exc}")
        return cls(rules, **kwargs)

    def _complete(self, request: CompletionRequest) -> Completion:
        with self._calls_lock:
            self.calls += 1
        for rule in self.rules:
            if rule.matches(request.prompt):
                logprobs = rule.token_logprobs if request.want_logprobs else None
                return Completion(
                    text=rule.text,
                    token_logprobs=logprobs,
                    backend_id=self.backend_id,
                    latency_ms=0.0,
                )
        raise ScriptMiss(request.prompt)

    def count_tokens(self, text: str) -> int | None:
        return self._tokenizer(text) if self._tokenizer is not None else None

    def fingerprint(self) -> str:
        return f"{self.backend_id}:{self._fingerprint}"


def _rule_from_dict(d: dict[str, Any]) -> ScriptRule:
    match = d["match"]
    response = d["response"]
    raw_lp = response.get("token_logprobs")
    token_logprobs = tuple((t, float(v)) for t, v in raw_lp) if raw_lp else None
    return ScriptRule(
        mode=match["mode"],
        pattern=match["pattern"],
        text=response["text"],
        token_logprobs=token_logprobs,
    )


def complete(request: CompletionRequest, backend: CompletionBackend) -> Completion:
    """Send one request through a backend, noting log-probability degradation."""
    completion = backend.complete(request)
    if request.want_logprobs and completion.token_logprobs is None:
        log.warning(
            "backend %s returned no token log-probabilities; confidence unavailable",
            backend.backend_id,
        )
    return completion


def parallel_map_ordered(
    fn: Callable[[T], R],
    items: Sequence[T],
    max_workers: int,
) -> list[R]:
    """Apply fn to items concurrently, returning results in input order.

    The backends bound actual in-flight requests with their own semaphores;
    this only fans work out. Exceptions propagate like a plain loop.
    """
    if max_workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fn, items))
