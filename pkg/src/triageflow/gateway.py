"""Provider gateway: model config, prompt templates, embeddings, HTTP client.

Everything that talks to a language-model provider goes through this module.
The wire shape is the common chat-completions one, so any OpenAI-compatible
endpoint works. All outbound traffic is rate limited with a token bucket and
retried with exponential backoff on transient failures only.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

import httpx

from .errors import (
    AuthError,
    EmbedderFailure,
    MalformedProviderResponse,
    PromptRenderError,
    ProviderError,
    ProviderTimeout,
    RateLimited,
)

logger = logging.getLogger(__name__)

ENV_BASE_URL = "TRIAGE_PROVIDER_BASE_URL"
ENV_MODEL = "TRIAGE_PROVIDER_MODEL"
ENV_KEY = "TRIAGE_PROVIDER_KEY"
ENV_EMBED_MODEL = "TRIAGE_EMBED_MODEL"

# Pinned sampling temperatures. Decision and retrieval calls must be as
# deterministic as the provider allows; synthetic data wants variety.
TEMPERATURE_DECISION = 0.0
TEMPERATURE_RETRIEVAL = 0.0
TEMPERATURE_GENERATION = 0.9
TEMPERATURE_CHAT = 0.7


@dataclass
class ProviderConfig:
    base_url: str
    model: str
    api_key: str | None = None
    embed_model: str | None = None
    timeout: float = 30.0
    max_retries: int = 2
    backoff_base: float = 0.5
    requests_per_second: float = 8.0

    def __repr__(self) -> str:  # the key must never leak into logs
        masked = "***" if self.api_key else None
        return (
            f"ProviderConfig(base_url={self.base_url!r}, model={self.model!r}, "
            f"api_key={masked!r}, embed_model={self.embed_model!r})"
        )

    @classmethod
    def from_sources(cls, config_file: str | Path | None = None) -> "ProviderConfig":
        """Build from an optional JSON file, with environment variables winning."""
        values: dict[str, Any] = {}
        if config_file is not None:
            raw = json.loads(Path(config_file).read_text(encoding="utf-8"))
            if not isinstance(raw, dict):
                raise ProviderError("provider config file must hold a JSON object")
            values.update(raw)
        env_map = {
            "base_url": ENV_BASE_URL,
            "model": ENV_MODEL,
            "api_key": ENV_KEY,
            "embed_model": ENV_EMBED_MODEL,
        }
        for attr, env_name in env_map.items():
            env_value = os.environ.get(env_name)
            if env_value:
                values[attr] = env_value
        if not values.get("base_url") or not values.get("model"):
            raise ProviderError(
                f"provider not configured: set {ENV_BASE_URL} and {ENV_MODEL} "
                "or pass a config file"
            )
        allowed = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = sorted(set(values) - set(allowed))
        if unknown:
            raise ProviderError(f"unknown provider config keys: {unknown}")
        return cls(**values)


def provider_configured() -> bool:
    return bool(os.environ.get(ENV_BASE_URL)) and bool(os.environ.get(ENV_MODEL))


# ---------------------------------------------------------------------------
# Prompt templates


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    text: str
    placeholders: frozenset[str]


_TEMPLATE_TEXTS: dict[str, str] = {
    "retrieval_agent": (
        "Your role: You are an assistant supporting an Emergency Department nurse"
        " with patient self-triage.\n"
        "Your task: Based on the patient input, identify and return only the name"
        " of the appropriate flowchart to use from the provided context.\n"
        'If there is no relevant flowchart, return: "no flowchart available".\n'
        "Patient input: {query}\n"
        "Context:\n{candidates}"
    ),
    "decision_agent": (
        "Your role: You are a decision making assistant supporting an Emergency"
        " Department nurse with patient self-triage.\n"
        "Your task: Based on the patient input, decide whether the patient provided"
        " an answer to the question from the triage protocol below.\n"
        "Return a JSON object with exactly these four fields:\n"
        '- "isOnTopic": "Yes" if the patient input is relevant to the question,'
        ' otherwise "No".\n'
        '- "isAnswered": "Yes" if the patient input provides a yes or no answer'
        ' to the question, otherwise "No".\n'
        '- "actualAnswer": "Yes" if the patient answers the question affirmatively,'
        ' "No" if the patient answers negatively, null if no answer was given.\n'
        '- "isUncertain": "Yes" if the patient expresses uncertainty or hedges'
        " (for example 'maybe', 'not sure', 'probably'), otherwise \"No\".\n"
        "Answer with the JSON object only.\n"
        "Question: {question}\n"
        "Patient input: {response}"
    ),
    "chat_convey": (
        "Your role: You are a nurse responsible for online self-triage in the"
        " Emergency Department.\n"
        "Your task: Convey this to the patient:\n"
        "{node_text}\n"
        "Rules: 1. Your response must fully adhere to the provided content; no"
        " additional medical information is allowed.\n"
        "2. Be concise and empathetic, and avoid excessive repetition.\n"
        "3. If the content is a question, the question itself must appear"
        " verbatim in your response."
    ),
    "chat_reask": (
        "Your role: You are a nurse responsible for online self-triage in the"
        " Emergency Department.\n"
        "Your task: The patient's reply did not address the question. Steer the"
        " conversation back and ask this again:\n"
        "{node_text}\n"
        "Rules: 1. Your response must fully adhere to the provided content; no"
        " additional medical information is allowed.\n"
        "2. Be concise and empathetic, and avoid excessive repetition.\n"
        "3. The question itself must appear verbatim in your response."
    ),
    "chat_confirm": (
        "Your role: You are a nurse responsible for online self-triage in the"
        " Emergency Department.\n"
        "Your task: The patient sounded unsure. Gently try to confirm this:\n"
        "{node_text}\n"
        "Rules: 1. Your response must fully adhere to the provided content; no"
        " additional medical information is allowed.\n"
        "2. Be concise and empathetic, and avoid excessive repetition.\n"
        "3. The question itself must appear verbatim in your response."
    ),
    "gen_brief_opening": (
        "Task: Generate {num} distinct sets of patient demographics and BRIEF"
        " opening statements according to the following flowchart.\n"
        "Flowchart: {flowchart}\n"
        "Template for each set:\n"
        "Sex: Male or Female\n"
        "Age: a number followed by a unit (for example 25 years, or 1 month)\n"
        "Opening Statement: a conversational statement (in quotes) that the"
        " patient would use to raise their concern via online triage.\n"
        "Rules: 1. Ensure diversity in age, sex, and opening statements across"
        " the sets.\n"
        "2. Each opening statement must be no more than 25 words long."
        "{extra_rules}"
    ),
    "gen_detailed_opening": (
        "Task: Generate {num} distinct sets of patient demographics and DETAILED"
        " opening statements according to the following flowchart.\n"
        "Flowchart: {flowchart}\n"
        "Template for each set:\n"
        "Sex: Male or Female\n"
        "Age: a number followed by a unit (for example 25 years, or 1 month)\n"
        "Opening Statement: a conversational statement (in quotes) that the"
        " patient would use to raise their concern via online triage.\n"
        "Rules: 1. Ensure diversity in age, sex, and opening statements across"
        " the sets.\n"
        "2. Each opening statement must be at least 50 words long and include"
        " details of the complaint: location, quality, timing, and anything"
        " that makes it better or worse."
        "{extra_rules}"
    ),
    "gen_patient_response": (
        "Task: Provide {num} distinct ways to respond{answer_clause} to the"
        " following question.\n"
        "Question: {question}\n"
        "Rules: 1. Responses should reflect natural and everyday language, as"
        " patients would phrase their answers conversationally with a triage"
        " nurse online.\n"
        "2. Responses should be {pattern_name}: {pattern_definition}\n"
        "3. Return the responses as a numbered list, one response per line."
    ),
}

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")

PROMPTS: dict[str, PromptTemplate] = {
    template_id: PromptTemplate(
        id=template_id,
        text=text,
        placeholders=frozenset(_PLACEHOLDER_RE.findall(text)),
    )
    for template_id, text in _TEMPLATE_TEXTS.items()
}


def render_prompt(template_id: str, **values: str) -> str:
    """Fill a registered template. Both missing and surplus values are errors."""
    template = PROMPTS.get(template_id)
    if template is None:
        raise PromptRenderError(f"unknown prompt template {template_id!r}")
    given = set(values)
    if given != template.placeholders:
        missing = sorted(template.placeholders - given)
        surplus = sorted(given - template.placeholders)
        raise PromptRenderError(
            f"template {template_id!r}: missing {missing}, surplus {surplus}"
        )
    return template.text.format(**values)


# ---------------------------------------------------------------------------
# Embeddings


HASH_EMBED_DIMENSION = 256
_FNV_OFFSET = 14695981039346656037
_FNV_PRIME = 1099511628211
_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _fnv1a_64(data: bytes) -> int:
    value = _FNV_OFFSET
    for byte in data:
        value ^= byte
        value = (value * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return value


def hash_embed(text: str, dimension: int = HASH_EMBED_DIMENSION) -> list[float]:
    """Deterministic bag-of-tokens embedding.

    Tokens are lowercased alphanumeric runs; each token is hashed with
    64-bit FNV-1a into one of ``dimension`` buckets and the bucket counts
    are L2 normalised. Needs no network and no model weights, which keeps
    retrieval fully reproducible offline.
    """
    counts = [0.0] * dimension
    for token in _TOKEN_RE.findall(text.lower()):
        counts[_fnv1a_64(token.encode("utf-8")) % dimension] += 1.0
    norm = math.sqrt(sum(c * c for c in counts))
    if norm == 0.0:
        counts[0] = 1.0  # empty text maps to a fixed unit vector
        return counts
    return [c / norm for c in counts]


class Embedder(Protocol):
    embedder_id: str
    dimension: int

    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


class HashEmbedder:
    def __init__(self, dimension: int = HASH_EMBED_DIMENSION) -> None:
        self.dimension = dimension
        self.embedder_id = f"hash-fnv1a-{dimension}"
        self.offline = True

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        return [hash_embed(t, self.dimension) for t in texts]


# ---------------------------------------------------------------------------
# Rate limiting


class TokenBucket:
    """Classic token bucket. ``acquire`` blocks until a token is available."""

    def __init__(
        self,
        rate_per_second: float,
        capacity: float | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if rate_per_second <= 0:
            raise ValueError("rate_per_second must be positive")
        self.rate = rate_per_second
        self.capacity = capacity if capacity is not None else max(1.0, rate_per_second)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def _refill(self) -> None:
        now = self._clock()
        self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
        self._last = now

    def acquire(self) -> None:
        while True:
            with self._lock:
                self._refill()
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


# ---------------------------------------------------------------------------
# Providers


class TextProvider(Protocol):
    def generate(self, prompt: str, temperature: float = 0.0) -> str: ...


# (method, url, headers, json_body, timeout) -> (status_code, parsed_body)
Transport = Callable[[str, str, dict[str, str], Any, float], tuple[int, Any]]


def _httpx_transport(
    method: str, url: str, headers: dict[str, str], json_body: Any, timeout: float
) -> tuple[int, Any]:
    try:
        response = httpx.request(method, url, headers=headers, json=json_body, timeout=timeout)
    except httpx.TimeoutException as exc:
        raise ProviderTimeout(f"provider timed out calling {url}") from exc
    except httpx.HTTPError as exc:
        raise ProviderError(f"provider transport error calling {url}: {type(exc).__name__}") from exc
    try:
        body = response.json()
    except ValueError:
        body = None
    return response.status_code, body


class HttpTextProvider:
    """Chat-completions client with retries, backoff, and rate limiting.

    Retries cover timeouts, connection drops, 429 and 5xx responses.
    Auth failures and malformed bodies are never retried. The API key is
    kept out of every log line and exception message.
    """

    offline = False

    def __init__(
        self,
        config: ProviderConfig,
        transport: Transport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        bucket: TokenBucket | None = None,
    ) -> None:
        self.config = config
        self._transport = transport or _httpx_transport
        self._sleep = sleep
        self._bucket = bucket or TokenBucket(config.requests_per_second)

    # -- internals

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        return headers

    def _call(self, path: str, body: Any) -> Any:
        url = self.config.base_url.rstrip("/") + path
        last_error: ProviderError | None = None
        attempts = self.config.max_retries + 1
        for attempt in range(attempts):
            if attempt:
                delay = self.config.backoff_base * (2 ** (attempt - 1))
                logger.info("retrying %s (attempt %d/%d) after %.2fs", path, attempt + 1, attempts, delay)
                self._sleep(delay)
            self._bucket.acquire()
            try:
                status, payload = self._transport("POST", url, self._headers(), body, self.config.timeout)
            except (ProviderTimeout, ProviderError) as exc:
                if isinstance(exc, (AuthError, MalformedProviderResponse)):
                    raise
                last_error = exc
                continue
            if status == 200:
                return payload
            if status in (401, 403):
                raise AuthError(f"provider rejected credentials (HTTP {status})")
            if status == 429:
                last_error = RateLimited("provider returned HTTP 429")
                continue
            if status >= 500:
                last_error = ProviderError(f"provider returned HTTP {status}")
                continue
            raise ProviderError(f"provider returned HTTP {status} for {path}")
        assert last_error is not None
        raise last_error

    # -- public API

    def generate(self, prompt: str, temperature: float = 0.0) -> str:
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
        }
        payload = self._call("/chat/completions", body)
        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise MalformedProviderResponse(
                "chat completion response missing choices[0].message.content"
            ) from None
        if not isinstance(content, str):
            raise MalformedProviderResponse("chat completion content is not a string")
        return content

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if not self.config.embed_model:
            raise EmbedderFailure(f"no embedding model configured (set {ENV_EMBED_MODEL})")
        body = {"model": self.config.embed_model, "input": list(texts)}
        payload = self._call("/embeddings", body)
        try:
            vectors = [item["embedding"] for item in payload["data"]]
        except (KeyError, TypeError):
            raise MalformedProviderResponse("embeddings response missing data[].embedding") from None
        if len(vectors) != len(texts) or any(
            not isinstance(v, list) or not v or not all(isinstance(x, (int, float)) for x in v)
            for v in vectors
        ):
            raise EmbedderFailure("embeddings response has the wrong shape")
        return [[float(x) for x in v] for v in vectors]

    def healthcheck(self) -> bool:
        url = self.config.base_url.rstrip("/") + "/models"
        try:
            status, _ = self._transport("GET", url, self._headers(), None, min(5.0, self.config.timeout))
        except ProviderError:
            return False
        return status < 500 and status not in (401, 403)


class ProviderEmbedder:
    """Embedder backed by the provider's embeddings endpoint."""

    offline = False

    def __init__(self, provider: HttpTextProvider, dimension: int | None = None) -> None:
        self._provider = provider
        model = provider.config.embed_model or "unknown"
        self.embedder_id = f"provider:{model}"
        self._dimension = dimension

    @property
    def dimension(self) -> int:
        if self._dimension is None:
            self._dimension = len(self._provider.embed(["probe"])[0])
        return self._dimension

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        vectors = self._provider.embed(texts)
        for v in vectors:
            if len(v) != self.dimension:
                raise EmbedderFailure(
                    f"provider returned a {len(v)}-dimensional vector, expected {self.dimension}"
                )
        return vectors


class CannedTextProvider:
    """Deterministic in-process provider for tests and offline demos.

    Resolution order per prompt: exact match, first substring rule, then
    the default. Raises when nothing matches and no default was given.
    Every prompt seen is recorded for assertions.
    """

    offline = True

    def __init__(
        self,
        exact: dict[str, str] | None = None,
        rules: Sequence[tuple[str, str]] | None = None,
        default: str | None = None,
    ) -> None:
        self.exact = dict(exact or {})
        self.rules = list(rules or [])
        self.default = default
        self.calls: list[str] = []

    def generate(self, prompt: str, temperature: float = 0.0) -> str:
        self.calls.append(prompt)
        if prompt in self.exact:
            return self.exact[prompt]
        for needle, response in self.rules:
            if needle in prompt:
                return response
        if self.default is not None:
            return self.default
        raise MalformedProviderResponse("canned provider has no response for this prompt")
