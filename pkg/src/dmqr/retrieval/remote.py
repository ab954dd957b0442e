"""Web-search client mapping a provider's JSON result list onto ranked documents."""

from __future__ import annotations

import os
import time
from typing import Any, Callable, Mapping

import httpx

from ..errors import ConfigError, ProtocolError
from ..http import TokenBucket, request_json
from ..model import Document, RankedList


def _result_items(payload: Any) -> list[dict[str, Any]]:
    if isinstance(payload, list):
        return payload
    if isinstance(payload, dict):
        web = payload.get("webPages")
        if isinstance(web, dict) and isinstance(web.get("value"), list):
            return web["value"]
        for key in ("results", "items", "value", "organic_results"):
            if isinstance(payload.get(key), list):
                return payload[key]
    raise ProtocolError("search response holds no result list")


def adapt_results(query_text: str, payload: Any, limit: int) -> RankedList:
    """Map ``{name|title, url, snippet}`` items positionally to ranks."""
    docs = []
    for item in _result_items(payload):
        if not isinstance(item, dict):
            continue
        title = str(item.get("name") or item.get("title") or "")
        url = item.get("url") or item.get("link") or None
        snippet = str(item.get("snippet") or item.get("content") or item.get("description") or "")
        if not url and not snippet.strip():
            continue
        docs.append(Document.create(title, snippet, url))
    ranked = RankedList.from_documents(query_text, docs)
    return RankedList(ranked.query, ranked.docs[:limit])


class RemoteSearchRetriever:
    """HTTP GET ``<url>?q=<query>&count=<limit>`` against a JSON search API."""

    def __init__(
        self,
        url: str,
        *,
        api_key: str | None = None,
        key_header: str = "Ocp-Apim-Subscription-Key",
        timeout: float = 10.0,
        max_retries: int = 2,
        requests_per_second: float | None = None,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if not url:
            raise ConfigError("search endpoint URL is not configured")
        self.url = url
        self.id = f"remote:{url}"
        self._headers = {key_header: api_key} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout)
        self._limiter = TokenBucket(requests_per_second) if requests_per_second else None
        self.max_retries = max_retries
        self._sleep = sleep

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None, **kwargs: Any) -> RemoteSearchRetriever:
        env = os.environ if env is None else env
        return cls(env.get("DMQR_SEARCH_URL", ""), api_key=env.get("DMQR_SEARCH_KEY"), **kwargs)

    def search(self, query_text: str, limit: int) -> RankedList:
        if limit < 1:
            raise ValueError("limit must be >= 1")
        payload, _ = request_json(
            self._client,
            "GET",
            self.url,
            params={"q": query_text, "count": limit},
            headers=self._headers,
            max_retries=self.max_retries,
            limiter=self._limiter,
            sleep=self._sleep,
        )
        return adapt_results(query_text, payload, limit)
