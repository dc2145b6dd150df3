"""Chat-completion providers: an OpenAI-compatible HTTP client behind a small interface."""

from __future__ import annotations

import logging
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Optional, Protocol, Sequence, Union

import httpx

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
API_KEY_ENV = "OPENAI_API_KEY"


class LLMError(Exception):
    """Base class for provider failures."""


class TransportError(LLMError):
    """Network-level failure that is not worth retrying."""


class ProviderError(LLMError):
    """The provider rejected the request (4xx other than 429)."""

    def __init__(self, message: str, status_code: Optional[int] = None):
        super().__init__(message)
        self.status_code = status_code


class BudgetExhausted(LLMError):
    """Transient failures persisted past the retry budget."""


class MalformedResponse(LLMError):
    """The response carried no assistant content."""


class InvalidConversation(LLMError):
    """The conversation cannot be sent (bad role, empty turn, not ending with user)."""


class ConfigurationError(LLMError):
    pass


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


Conversation = Sequence[ChatMessage]


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.6
    top_p: float = 0.9
    top_k: Optional[int] = 50
    repetition_penalty: float = 1.0
    max_new_tokens: int = 1024
    seed: Optional[int] = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.top_k is not None and self.top_k <= 0:
            raise ValueError("top_k must be positive")
        if self.repetition_penalty < 1:
            raise ValueError("repetition_penalty must be >= 1")
        if self.max_new_tokens <= 0:
            raise ValueError("max_new_tokens must be positive")

    @classmethod
    def for_model(cls, model: str, **overrides) -> "GenerationParams":
        """Defaults for a model family, looked up by substring of ``model``."""
        name = model.lower().replace("-", "").replace("_", "")
        base: dict = {}
        for key in sorted(MODEL_DEFAULTS, key=len, reverse=True):
            if key in name:
                base = dict(MODEL_DEFAULTS[key])
                break
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


# sampling configs per chat model family
MODEL_DEFAULTS: dict[str, dict[str, Any]] = {
    "qwen2.5": dict(top_k=20, top_p=0.8, temperature=0.7, repetition_penalty=1.05),
    "llama2": dict(top_k=50, top_p=0.9, temperature=0.6, repetition_penalty=1.00),
    "llama3": dict(top_k=50, top_p=0.9, temperature=0.6, repetition_penalty=1.00),
    "llama3.1": dict(top_k=50, top_p=0.9, temperature=0.6, repetition_penalty=1.00),
}


@dataclass
class CompletionResult:
    text: str
    finish_reason: str = "stop"
    raw_provider_payload: Any = field(default=None, repr=False, compare=False)


class Provider(Protocol):
    name: str

    def complete(self, conversation: Conversation, params: GenerationParams) -> CompletionResult: ...

    def complete_batch(
        self, conversations: Sequence[Conversation], params: Union[GenerationParams, Sequence[GenerationParams]]
    ) -> list[Union[CompletionResult, LLMError]]: ...


def validate_conversation(conversation: Conversation) -> None:
    if not conversation:
        raise InvalidConversation("empty conversation")
    for msg in conversation:
        if not isinstance(msg, ChatMessage):
            raise InvalidConversation(f"expected ChatMessage, got {type(msg).__name__}")
        if msg.role in ("user", "assistant") and not msg.content.strip():
            raise InvalidConversation(f"empty {msg.role} turn")
    if conversation[-1].role != "user":
        raise InvalidConversation("conversation must end with a user turn")


def _normalize_finish(reason: Optional[str]) -> str:
    return reason if reason in ("stop", "length") else "other"


class BatchMixin:
    """Bounded-concurrency ``complete_batch`` on top of ``complete``."""

    max_in_flight: int = 1

    def complete_batch(self, conversations, params):
        if not conversations:
            raise ConfigurationError("complete_batch needs at least one conversation")
        if self.max_in_flight < 1:
            raise ConfigurationError("max_in_flight must be >= 1")
        if isinstance(params, GenerationParams):
            params = [params] * len(conversations)
        elif len(params) != len(conversations):
            raise ConfigurationError("params must be one GenerationParams or one per conversation")

        def one(pair):
            conv, p = pair
            try:
                return self.complete(conv, p)
            except LLMError as exc:
                return exc

        pairs = list(zip(conversations, params))
        if self.max_in_flight == 1:
            return [one(p) for p in pairs]
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(one, pairs))


class OpenAICompatProvider(BatchMixin):
    """Client for any ``/chat/completions`` endpoint speaking the OpenAI wire format.

    The API key is read from the environment only (``api_key_env``). Transient
    failures (timeouts, connection errors, HTTP 429 and 5xx) are retried with
    jittered exponential backoff; anything else fails immediately.
    """

    RETRYABLE_STATUS = frozenset({408, 409, 429}) | frozenset(range(500, 600))

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        api_key_env: str = API_KEY_ENV,
        max_retries: int = 3,
        backoff: float = 1.0,
        timeout: float = 120.0,
        max_in_flight: int = 4,
        extended_params: bool = False,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not base_url:
            raise ConfigurationError("base_url is required")
        if max_retries < 0:
            raise ConfigurationError("max_retries must be >= 0")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.name = f"openai-compat:{model}"
        self.max_retries = max_retries
        self.backoff = backoff
        self.max_in_flight = max_in_flight
        # top_k / repetition_penalty are vLLM/TGI extensions, rejected by some servers
        self.extended_params = extended_params
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(base_url=self.base_url, headers=headers, timeout=timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def payload(self, conversation: Conversation, params: GenerationParams) -> dict:
        body = {
            "model": self.model,
            "messages": [m.to_dict() for m in conversation],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_new_tokens,
            "n": 1,
        }
        if params.seed is not None:
            body["seed"] = params.seed
        if self.extended_params:
            if params.top_k is not None:
                body["top_k"] = params.top_k
            body["repetition_penalty"] = params.repetition_penalty
        return body

    def _delay(self, attempt: int) -> float:
        return self.backoff * (2**attempt) * (0.5 + random.random() / 2)

    def complete(self, conversation: Conversation, params: GenerationParams) -> CompletionResult:
        validate_conversation(conversation)
        body = self.payload(conversation, params)
        last_error: Optional[Exception] = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                delay = self._delay(attempt - 1)
                logger.warning("retrying chat completion (%d/%d) in %.1fs: %s", attempt, self.max_retries, delay, last_error)
                self._sleep(delay)
            try:
                resp = self._client.post("/chat/completions", json=body)
            except (httpx.TimeoutException, httpx.NetworkError, httpx.RemoteProtocolError) as exc:
                last_error = exc
                continue
            except httpx.HTTPError as exc:
                raise TransportError(str(exc)) from exc
            if resp.status_code in self.RETRYABLE_STATUS:
                last_error = ProviderError(f"HTTP {resp.status_code}", resp.status_code)
                continue
            if resp.status_code >= 400:
                raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:500]}", resp.status_code)
            return self._parse(resp)
        raise BudgetExhausted(f"gave up after {self.max_retries} retries: {last_error}") from last_error

    @staticmethod
    def _parse(resp: httpx.Response) -> CompletionResult:
        try:
            data = resp.json()
            choice = data["choices"][0]
            content = choice["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"no assistant content in response: {resp.text[:200]}") from exc
        if not isinstance(content, str):
            raise MalformedResponse("assistant content is not a string")
        return CompletionResult(
            text=content.strip(),
            finish_reason=_normalize_finish(choice.get("finish_reason")),
            raw_provider_payload=data,
        )
