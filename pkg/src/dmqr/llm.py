"""Chat-completion gateway: HTTP client, scripted mock and prompt templates."""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

import httpx

from .errors import ConfigError, EmptyCompletion, MissingPlaceholder, ProtocolError
from .http import TokenBucket, request_json

REWRITE_TEMPERATURE = 0.0
ANSWER_TEMPERATURE = 0.2


@dataclass(frozen=True, slots=True)
class ChatRequest:
    user: str
    system: str | None = None
    temperature: float = REWRITE_TEMPERATURE
    max_tokens: int = 512
    model: str = "default"

    def __post_init__(self) -> None:
        if not self.user:
            raise ValueError("chat request has an empty user message")
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError("temperature must be in [0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    @property
    def prompt(self) -> str:
        """Full rendered prompt, as used for fixture hashing."""
        if self.system:
            return f"{self.system}\n\n{self.user}"
        return self.user

    def to_dict(self) -> dict[str, Any]:
        return {
            "system": self.system,
            "user": self.user,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "model": self.model,
        }


@dataclass(frozen=True, slots=True)
class ChatResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: int = 0
    retries: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "usage": {"prompt": self.prompt_tokens, "completion": self.completion_tokens},
            "latency_ms": self.latency_ms,
            "retries": self.retries,
        }


class Completer(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


# Templates -----------------------------------------------------------------

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass(frozen=True, slots=True)
class PromptTemplate:
    name: str
    body: str

    @property
    def placeholders(self) -> list[str]:
        return list(dict.fromkeys(_PLACEHOLDER.findall(self.body)))

    def render(self, **bindings: str) -> str:
        return render(self, bindings)


def render(template: PromptTemplate, bindings: Mapping[str, str]) -> str:
    """Single-pass substitution; binding values are inserted verbatim."""

    def sub(match: re.Match[str]) -> str:
        name = match.group(1)
        if name not in bindings:
            raise MissingPlaceholder(name)
        return str(bindings[name])

    return _PLACEHOLDER.sub(sub, template.body)


def load_template(name: str, directory: str | Path | None = None) -> PromptTemplate:
    """Load ``<name>.txt`` from ``directory`` or from the bundled templates."""
    if directory is not None:
        path = Path(directory) / f"{name}.txt"
        if path.exists():
            return PromptTemplate(name, path.read_text(encoding="utf-8"))
    body = resources.files("dmqr").joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")
    return PromptTemplate(name, body)


# Scripted mock ---------------------------------------------------------------

_HEX64 = re.compile(r"^[0-9a-f]{64}$")


class ScriptedCompleter:
    """Deterministic completer driven by fixtures.

    Fixture keys are either the sha256 hex digest of the full prompt or a
    substring pattern. Hash matches win; otherwise the longest matching
    substring pattern is used (first declared wins on equal length). An
    optional ``responder`` callable is consulted before the fallback
    ``default``. Every request is recorded in ``calls``.
    """

    def __init__(
        self,
        fixtures: Mapping[str, str] | None = None,
        *,
        responder: Callable[[ChatRequest], str | None] | None = None,
        default: str | None = None,
    ) -> None:
        fixtures = dict(fixtures or {})
        self._hashed = {k: v for k, v in fixtures.items() if _HEX64.match(k)}
        self._patterns = [(k, v) for k, v in fixtures.items() if not _HEX64.match(k)]
        self._responder = responder
        self._default = default
        self._lock = threading.Lock()
        self.calls: list[ChatRequest] = []

    @classmethod
    def from_file(cls, path: str | Path, **kwargs: Any) -> ScriptedCompleter:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: fixture file must hold a JSON object")
        return cls({str(k): str(v) for k, v in data.items()}, **kwargs)

    def lookup(self, prompt: str) -> str | None:
        digest = prompt_hash(prompt)
        if digest in self._hashed:
            return self._hashed[digest]
        best: tuple[str, str] | None = None
        for pattern, text in self._patterns:
            if pattern in prompt and (best is None or len(pattern) > len(best[0])):
                best = (pattern, text)
        return best[1] if best else None

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls.append(request)
        text = self.lookup(request.prompt)
        if text is None and self._responder is not None:
            text = self._responder(request)
        if text is None:
            text = self._default
        if text is None:
            raise EmptyCompletion(
                f"no scripted completion for prompt {prompt_hash(request.prompt)[:12]}"
            )
        return ChatResponse(text=text, completion_tokens=len(text.split()))


# HTTP client ---------------------------------------------------------------


class HttpCompleter:
    """OpenAI-compatible chat-completions client."""

    def __init__(
        self,
        url: str,
        *,
        api_key: str | None = None,
        model: str = "gpt-4",
        max_retries: int = 3,
        backoff_base: float = 0.5,
        backoff_max: float = 8.0,
        timeout: float = 60.0,
        requests_per_second: float | None = None,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if not url:
            raise ConfigError("chat-completions endpoint URL is not configured")
        self.url = url
        self.model = model
        self.max_retries = max(0, int(max_retries))
        self.backoff_base = backoff_base
        self.backoff_max = backoff_max
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout, headers=headers)
        self._headers = headers
        self._limiter = TokenBucket(requests_per_second) if requests_per_second else None
        self._sleep = sleep
        self._lock = threading.Lock()
        self.request_count = 0

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None, **kwargs: Any) -> HttpCompleter:
        env = os.environ if env is None else env
        return cls(
            env.get("DMQR_LLM_URL", ""),
            api_key=env.get("DMQR_LLM_KEY"),
            model=env.get("DMQR_LLM_MODEL", "gpt-4"),
            **kwargs,
        )

    def complete(self, request: ChatRequest) -> ChatResponse:
        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.append({"role": "user", "content": request.user})
        body = {
            "model": self.model if request.model == "default" else request.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        with self._lock:
            self.request_count += 1
        started = time.monotonic()
        payload, retries = request_json(
            self._client,
            "POST",
            self.url,
            json=body,
            headers=self._headers,
            max_retries=self.max_retries,
            backoff_base=self.backoff_base,
            backoff_max=self.backoff_max,
            limiter=self._limiter,
            sleep=self._sleep,
        )
        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError("response lacks choices[0].message.content") from exc
        if content is None:
            raise EmptyCompletion("provider returned no content")
        usage = payload.get("usage") or {}
        return ChatResponse(
            text=content,
            prompt_tokens=int(usage.get("prompt_tokens", 0) or 0),
            completion_tokens=int(usage.get("completion_tokens", 0) or 0),
            latency_ms=int((time.monotonic() - started) * 1000),
            retries=retries,
        )

    def close(self) -> None:
        self._client.close()
