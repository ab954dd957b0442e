"""Retrying JSON-over-HTTP helper shared by the remote clients."""

from __future__ import annotations

import logging
import threading
import time
from typing import Any, Callable

import httpx

from .errors import AuthError, BadRequest, RateLimited, TransportError

log = logging.getLogger(__name__)

RETRYABLE_STATUS = frozenset({408, 425, 429, 500, 502, 503, 504})


class TokenBucket:
    """Token bucket limiter; ``acquire`` blocks until a token is available."""

    def __init__(
        self,
        rate: float,
        burst: int = 1,
        *,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = float(rate)
        self.capacity = max(1, int(burst))
        self._tokens = float(self.capacity)
        self._clock = clock
        self._sleep = sleep
        self._updated = clock()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        """Take one token. Returns the time spent waiting, in seconds."""
        with self._lock:
            now = self._clock()
            self._tokens = min(self.capacity, self._tokens + (now - self._updated) * self.rate)
            self._updated = now
            self._tokens -= 1.0
            wait = 0.0 if self._tokens >= 0 else -self._tokens / self.rate
        if wait > 0:
            self._sleep(wait)
        return wait


def _retry_after(response: httpx.Response) -> float | None:
    value = response.headers.get("retry-after")
    if value is None:
        return None
    try:
        return max(0.0, float(value))
    except ValueError:
        return None


def request_json(
    client: httpx.Client,
    method: str,
    url: str,
    *,
    json: Any = None,
    params: dict[str, Any] | None = None,
    headers: dict[str, str] | None = None,
    max_retries: int = 3,
    backoff_base: float = 0.5,
    backoff_max: float = 8.0,
    limiter: TokenBucket | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[Any, int]:
    """Send a request and decode the JSON body, retrying transient failures.

    Returns ``(payload, retries)``. Auth (401/403) and other 4xx errors are
    raised immediately; 429, 5xx and transport errors are retried with
    exponential backoff, honouring ``Retry-After`` when the server sends it.
    """
    retries = 0
    while True:
        if limiter is not None:
            limiter.acquire()
        delay = min(backoff_max, backoff_base * (2**retries))
        try:
            response = client.request(method, url, json=json, params=params, headers=headers)
        except httpx.TransportError as exc:
            error: Exception = TransportError(f"{method} {url}: {exc.__class__.__name__}: {exc}")
        else:
            status = response.status_code
            if status < 300:
                try:
                    return response.json(), retries
                except ValueError as exc:
                    raise BadRequest(f"{url} returned non-JSON body") from exc
            if status in (401, 403):
                raise AuthError(f"{url} rejected credentials (HTTP {status})")
            if status == 429:
                after = _retry_after(response)
                error = RateLimited(f"{url} rate limited (HTTP 429)", retry_after=after)
                if after is not None:
                    delay = min(backoff_max, after)
            elif status in RETRYABLE_STATUS:
                error = TransportError(f"{url} returned HTTP {status}")
            else:
                raise BadRequest(f"{url} returned HTTP {status}: {response.text[:200]}")
        if retries >= max_retries:
            raise error
        log.info("retrying %s %s after %s (attempt %d)", method, url, error, retries + 1)
        sleep(delay)
        retries += 1
