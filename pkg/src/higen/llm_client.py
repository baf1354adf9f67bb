"""Uniform access to OpenAI-compatible endpoints.

Two capabilities are exposed: greedy text generation (chat-completions route)
and teacher-forced log-probability scoring of a fixed continuation
(completions route with echo + logprobs). Requests are cached on disk by a
content hash so interrupted experiments replay offline, and a deterministic
mock backend makes the whole pipeline reproducible in tests.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import requests

from . import corpus
from .errors import (
    CapabilityError,
    ConfigError,
    EndpointError,
    OversizeError,
    SeamAlignmentError,
    TransportError,
)

DEFAULT_TIMEOUT = 120.0

_OVERSIZE_RE = re.compile(r"context(\s|_)?(length|window)|maximum.*(length|tokens)|too (long|many tokens)", re.IGNORECASE)


@dataclass(frozen=True)
class GenRequest:
    model: str
    user_prompt: str
    system_prompt: str | None = None
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class GenResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    latency_ms: int
    cached: bool


@dataclass(frozen=True)
class ScoreRequest:
    model: str
    context: str
    continuation: str

    def __post_init__(self) -> None:
        if not self.continuation:
            raise ValueError("continuation must be non-empty")


@dataclass(frozen=True)
class ScoreResponse:
    total_logprob: float
    token_count: int


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 5
    base_delay: float = 1.0
    factor: float = 2.0
    jitter: float = 0.2


class _Retryable(Exception):
    """Internal signal: transient failure worth another attempt."""


class Backend(Protocol):
    def complete(self, req: GenRequest) -> tuple[str, int, int]:
        """Return (text, prompt_tokens, completion_tokens)."""

    def score(self, req: ScoreRequest) -> tuple[float, int]:
        """Return (total_logprob, token_count) for the continuation."""


def _canonical_gen_key(req: GenRequest) -> str:
    payload = {
        "kind": "gen",
        "model": req.model,
        "system_prompt": req.system_prompt,
        "user_prompt": req.user_prompt,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
        "seed": req.seed,
    }
    return _hash_payload(payload)


def _canonical_score_key(req: ScoreRequest) -> str:
    payload = {
        "kind": "score",
        "model": req.model,
        "context": req.context,
        "continuation": req.continuation,
    }
    return _hash_payload(payload)


def _hash_payload(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def prompt_hash(prompt: str) -> str:
    """Short stable identifier for a prompt, safe to log (never the prompt itself)."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


class LLMClient:
    """Thread-safe client wrapping a backend with caching, retry, and an in-flight bound."""

    def __init__(
        self,
        backend: Backend,
        cache_dir: str | Path | None = None,
        concurrency: int = 4,
        retry: RetryPolicy = RetryPolicy(),
        sleep: Callable[[float], None] = time.sleep,
    ):
        if concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        self.backend = backend
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.retry = retry
        self._sleep = sleep
        self._semaphore = threading.BoundedSemaphore(concurrency)
        self._stats_lock = threading.Lock()
        self.backend_calls = 0
        self.cache_hits = 0

    # -- cache ------------------------------------------------------------

    def _cache_path(self, key: str) -> Path | None:
        return self.cache_dir / f"{key}.json" if self.cache_dir else None

    def _cache_read(self, key: str) -> dict | None:
        path = self._cache_path(key)
        if path is None or not path.exists():
            return None
        try:
            return json.loads(path.read_text(encoding="utf-8"))["response"]
        except (json.JSONDecodeError, KeyError):
            return None

    def _cache_write(self, key: str, request: dict, response: dict) -> None:
        path = self._cache_path(key)
        if path is None:
            return
        # Unique temp name per writer: concurrent writers of the same entry
        # hold identical content, so whichever rename lands last wins.
        tmp = path.with_suffix(f".{os.getpid()}.{threading.get_ident()}.tmp")
        tmp.write_text(
            json.dumps({"request": request, "response": response}, ensure_ascii=False),
            encoding="utf-8",
        )
        tmp.replace(path)

    # -- retry ------------------------------------------------------------

    def _with_retry(self, call: Callable[[], object]) -> object:
        last: Exception | None = None
        for attempt in range(self.retry.attempts):
            try:
                with self._semaphore:
                    return call()
            except _Retryable as exc:
                last = exc
                if attempt + 1 < self.retry.attempts:
                    delay = self.retry.base_delay * self.retry.factor**attempt
                    delay *= 1.0 + random.uniform(-self.retry.jitter, self.retry.jitter)
                    self._sleep(max(delay, 0.0))
        raise TransportError(f"retries exhausted after {self.retry.attempts} attempts: {last}")

    def _count_backend_call(self) -> None:
        with self._stats_lock:
            self.backend_calls += 1

    def _count_cache_hit(self) -> None:
        with self._stats_lock:
            self.cache_hits += 1

    # -- public API --------------------------------------------------------

    def generate(self, req: GenRequest, doc_id: str | None = None) -> GenResponse:
        key = _canonical_gen_key(req)
        hit = self._cache_read(key)
        if hit is not None:
            self._count_cache_hit()
            return GenResponse(
                text=hit["text"],
                prompt_tokens=hit["prompt_tokens"],
                completion_tokens=hit["completion_tokens"],
                latency_ms=0,
                cached=True,
            )

        def call() -> tuple[str, int, int]:
            self._count_backend_call()
            return self.backend.complete(req)

        started = time.monotonic()
        try:
            text, prompt_tokens, completion_tokens = self._with_retry(call)
        except OversizeError as exc:
            raise OversizeError(str(exc), doc_id=doc_id) if doc_id and not exc.doc_id else exc
        latency_ms = int((time.monotonic() - started) * 1000)
        response = {
            "text": text,
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
        }
        self._cache_write(key, {"kind": "gen", "key": key}, response)
        return GenResponse(text, prompt_tokens, completion_tokens, latency_ms, cached=False)

    def score_continuation(self, req: ScoreRequest, doc_id: str | None = None) -> ScoreResponse:
        key = _canonical_score_key(req)
        hit = self._cache_read(key)
        if hit is not None:
            self._count_cache_hit()
            return ScoreResponse(hit["total_logprob"], hit["token_count"])

        def call() -> tuple[float, int]:
            self._count_backend_call()
            return self.backend.score(req)

        try:
            total_logprob, token_count = self._with_retry(call)
        except OversizeError as exc:
            raise OversizeError(str(exc), doc_id=doc_id) if doc_id and not exc.doc_id else exc
        self._cache_write(
            key,
            {"kind": "score", "key": key},
            {"total_logprob": total_logprob, "token_count": token_count},
        )
        return ScoreResponse(total_logprob, token_count)


class HTTPBackend:
    """OpenAI-compatible HTTP backend: chat completions for generation,
    echoed completions with logprobs for teacher-forced scoring."""

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        timeout: float = DEFAULT_TIMEOUT,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.session = session or requests.Session()

    def _post(self, path: str, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self.session.post(
                f"{self.base_url}{path}", json=payload, headers=headers, timeout=self.timeout
            )
        except (requests.Timeout, requests.ConnectionError) as exc:
            raise _Retryable(f"transport failure: {exc}") from exc
        if resp.status_code in (429, 500, 502, 503, 504):
            raise _Retryable(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            excerpt = resp.text[:200]
            if resp.status_code == 400 and _OVERSIZE_RE.search(excerpt):
                raise OversizeError(f"backend rejected oversize request: {excerpt}")
            raise EndpointError(resp.status_code, excerpt)
        return resp.json()

    def complete(self, req: GenRequest) -> tuple[str, int, int]:
        messages = []
        if req.system_prompt:
            messages.append({"role": "system", "content": req.system_prompt})
        messages.append({"role": "user", "content": req.user_prompt})
        payload: dict = {
            "model": req.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.seed is not None:
            payload["seed"] = req.seed
        data = self._post("/v1/chat/completions", payload)
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise EndpointError(200, f"unexpected completion payload: {exc}") from exc
        usage = data.get("usage") or {}
        return text, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))

    def score(self, req: ScoreRequest) -> tuple[float, int]:
        try:
            return self._score_once(req.context, req.continuation, req.model)
        except SeamAlignmentError:
            # One retry with a space inserted at the seam; common BPE vocabularies
            # start continuation tokens on the space.
            return self._score_once(req.context + " ", req.continuation, req.model)

    def _score_once(self, context: str, continuation: str, model: str) -> tuple[float, int]:
        payload = {
            "model": model,
            "prompt": context + continuation,
            "max_tokens": 0,
            "echo": True,
            "logprobs": 1,
            "temperature": 0.0,
        }
        data = self._post("/v1/completions", payload)
        try:
            choice = data["choices"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise EndpointError(200, f"unexpected completions payload: {exc}") from exc
        logprobs = choice.get("logprobs")
        if not logprobs or "token_logprobs" not in logprobs or "text_offset" not in logprobs:
            raise CapabilityError(
                "backend does not return echoed token logprobs; "
                "scoring requires a completions route with echo+logprobs support"
            )
        offsets = logprobs["text_offset"]
        token_lps = logprobs["token_logprobs"]
        seam = len(context)
        start_idx = None
        for i, off in enumerate(offsets):
            if off >= seam:
                start_idx = i
                break
        if start_idx is None or offsets[start_idx] != seam:
            raise SeamAlignmentError(
                f"continuation start (offset {seam}) does not fall on a token boundary"
            )
        tail = token_lps[start_idx:]
        if not tail or any(lp is None for lp in tail):
            raise SeamAlignmentError("missing logprobs for continuation tokens")
        return float(math.fsum(tail)), len(tail)


# -- mock backend ----------------------------------------------------------

_KEY_SENTENCES_RE = re.compile(r"list of (\d+) key sentences", re.IGNORECASE)
_FENCE_RE = re.compile(r"^={4,}\s*$", re.MULTILINE)
_KEY_POINTS_MARKER = "key points:"
_ITEM_RE = re.compile(r"^\s*\d+[.)]\s+(.*)$")


def _mock_document_body(prompt: str) -> str:
    fences = list(_FENCE_RE.finditer(prompt))
    if len(fences) >= 2:
        return prompt[fences[0].end() : fences[1].start()].strip()
    marker = "Report:"
    idx = prompt.rfind(marker)
    if idx >= 0:
        body = prompt[idx + len(marker) :]
        cut = body.find("You should only focus")
        if cut >= 0:
            body = body[:cut]
        return body.strip()
    return prompt.strip()


def _mock_key_points(prompt: str) -> list[str]:
    low = prompt.lower()
    idx = low.rfind(_KEY_POINTS_MARKER)
    if idx < 0:
        return []
    items = []
    for line in prompt[idx + len(_KEY_POINTS_MARKER) :].splitlines():
        match = _ITEM_RE.match(line)
        if match and match.group(1).strip():
            items.append(match.group(1).strip())
    return items


def echo_first_k(req: GenRequest) -> str:
    """Deterministic generation double.

    For highlight-extraction prompts it returns the first k document sentences
    as the numbered scaffold plus their concatenation as the summary; for
    stage-two prompts it summarizes by echoing the key points; for direct
    prompts it echoes the first two document sentences.
    """
    prompt = req.user_prompt
    body = _mock_document_body(prompt)
    sentences = [s.text for s in corpus.segment_sentences(corpus.normalize_text(body))]
    k_match = _KEY_SENTENCES_RE.search(prompt)
    if k_match:
        k = min(int(k_match.group(1)), len(sentences))
        chosen = sentences[:k]
        numbered = "\n".join(f"{i + 1}. {text}" for i, text in enumerate(chosen))
        return f"Key Sentences:\n{numbered}\nSummary: {' '.join(chosen)}"
    points = _mock_key_points(prompt)
    if points:
        return "Summary: " + " ".join(points)
    chosen = sentences[:2] if sentences else ["ok."]
    return "Summary: " + " ".join(chosen)


def per_token_scorer(context: str, continuation: str) -> float:
    """Mock scoring contract: total logprob is -0.5 per whitespace token."""
    return -0.5 * len(continuation.split())


def overlap_scorer(context: str, continuation: str) -> float:
    """Mock scorer sensitive to ablations: the more continuation tokens are
    missing from the context, the lower the logprob."""
    cont_tokens = re.findall(r"[a-z0-9]+", continuation.lower())
    if not cont_tokens:
        return -1.0
    ctx_tokens = set(re.findall(r"[a-z0-9]+", context.lower()))
    missing = sum(1 for tok in cont_tokens if tok not in ctx_tokens)
    return -1.0 - missing / len(cont_tokens)


def no_summary(req: GenRequest) -> str:
    """Pathological double: never emits the "Summary:" marker (parse failures)."""
    return "The assistant rambles without following the requested structure."


_NAMED_GENERATORS: dict[str, Callable[[GenRequest], str]] = {
    "echo_first_k": echo_first_k,
    "no_summary": no_summary,
}
_NAMED_SCORERS: dict[str, Callable[[str, str], float]] = {
    "per_token": per_token_scorer,
    "overlap": overlap_scorer,
}


class MockBackend:
    """In-process backend for tests and deterministic runs.

    ``generate_fn`` maps a GenRequest to the completion text; ``score_fn``
    maps (context, continuation) to a total logprob. Both accept the names
    registered above. Records every request and counts calls.
    """

    def __init__(
        self,
        generate_fn: str | Callable[[GenRequest], str] = "echo_first_k",
        score_fn: str | Callable[[str, str], float] = "per_token",
    ):
        self.generate_fn = _NAMED_GENERATORS[generate_fn] if isinstance(generate_fn, str) else generate_fn
        self.score_fn = _NAMED_SCORERS[score_fn] if isinstance(score_fn, str) else score_fn
        self.requests: list[GenRequest | ScoreRequest] = []
        self.gen_calls = 0
        self.score_calls = 0
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        return self.gen_calls + self.score_calls

    def complete(self, req: GenRequest) -> tuple[str, int, int]:
        with self._lock:
            self.gen_calls += 1
            self.requests.append(req)
        text = self.generate_fn(req)
        return text, len(req.user_prompt.split()), len(text.split())

    def score(self, req: ScoreRequest) -> tuple[float, int]:
        with self._lock:
            self.score_calls += 1
            self.requests.append(req)
        return self.score_fn(req.context, req.continuation), max(len(req.continuation.split()), 1)


class ScriptedBackend:
    """Backend that replays a fixed sequence of completion texts."""

    def __init__(self, responses: list[str], score_fn: Callable[[str, str], float] = per_token_scorer):
        self._responses = list(responses)
        self._index = 0
        self.score_fn = score_fn
        self.requests: list[GenRequest | ScoreRequest] = []
        self._lock = threading.Lock()

    def complete(self, req: GenRequest) -> tuple[str, int, int]:
        with self._lock:
            self.requests.append(req)
            if self._index >= len(self._responses):
                raise EndpointError(500, "scripted backend exhausted")
            text = self._responses[self._index]
            self._index += 1
        return text, len(req.user_prompt.split()), len(text.split())

    def score(self, req: ScoreRequest) -> tuple[float, int]:
        with self._lock:
            self.requests.append(req)
        return self.score_fn(req.context, req.continuation), max(len(req.continuation.split()), 1)


def backend_from_url(base_url: str, api_key: str | None = None, timeout: float = DEFAULT_TIMEOUT):
    """Build a backend from a base URL; ``mock://<generator>?scorer=<name>``
    selects the in-process mock."""
    if base_url.startswith("mock://"):
        rest = base_url[len("mock://") :]
        name, _, query = rest.partition("?")
        scorer = "overlap"
        if query.startswith("scorer="):
            scorer = query[len("scorer=") :]
        return MockBackend(generate_fn=name or "echo_first_k", score_fn=scorer)
    return HTTPBackend(base_url, api_key=api_key, timeout=timeout)


def resolve_endpoint(base_url: str | None, api_key_env: str | None = None) -> tuple[str, str | None]:
    """Resolve the endpoint URL and key from config values and environment."""
    url = base_url or os.environ.get("HIGEN_API_BASE")
    if not url:
        raise ConfigError("no endpoint configured: set endpoint.base_url or HIGEN_API_BASE")
    key = os.environ.get(api_key_env) if api_key_env else os.environ.get("HIGEN_API_KEY")
    return url, key
