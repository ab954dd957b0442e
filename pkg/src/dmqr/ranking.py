"""Cross-query aggregation: dedup, reciprocal rank fusion, reranking, top-K.

Every ordering here breaks score ties by document key, ascending.
"""

from __future__ import annotations

import logging
import math
import time
from collections import Counter
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import httpx

from .errors import ConfigError, ProtocolError, ServiceError
from .http import request_json
from .model import Document, Query, RankedList, tokenize

log = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class Contribution:
    query: str
    strategy: str
    rank: int

    def to_dict(self) -> dict[str, Any]:
        return {"query": self.query, "strategy": self.strategy, "rank": self.rank}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Contribution:
        return cls(data["query"], data["strategy"], int(data["rank"]))


@dataclass(frozen=True, slots=True)
class PooledDoc:
    """A dedup survivor together with every list position it was seen at."""

    doc: Document
    contributing: tuple[Contribution, ...]


@dataclass(frozen=True, slots=True)
class FusedDoc:
    doc: Document
    fused_score: float
    contributing: tuple[Contribution, ...]

    def __post_init__(self) -> None:
        if not self.contributing:
            raise ValueError("fused document without contributing lists")

    def to_dict(self) -> dict[str, Any]:
        return {
            "doc": self.doc.to_dict(),
            "fused_score": self.fused_score,
            "contributing": [c.to_dict() for c in self.contributing],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> FusedDoc:
        return cls(
            Document.from_dict(data["doc"]),
            float(data["fused_score"]),
            tuple(Contribution.from_dict(c) for c in data["contributing"]),
        )


def deduplicate(lists: Sequence[RankedList]) -> list[PooledDoc]:
    """Merge lists by document key; the earliest occurrence survives."""
    order: list[str] = []
    first: dict[str, Document] = {}
    seen_at: dict[str, list[Contribution]] = {}
    for ranked in lists:
        for doc in ranked.docs:
            contrib = Contribution(ranked.query, doc.retrieved_by, doc.retrieval_rank)
            if doc.key not in first:
                first[doc.key] = doc
                order.append(doc.key)
                seen_at[doc.key] = []
            seen_at[doc.key].append(contrib)
    return [PooledDoc(first[k], tuple(seen_at[k])) for k in order]


def _sorted(items: list[FusedDoc]) -> list[FusedDoc]:
    return sorted(items, key=lambda f: (-f.fused_score, f.doc.key))


def rrf_fuse(lists: Sequence[RankedList], k: int = 60) -> list[FusedDoc]:
    """Reciprocal rank fusion: score(d) = sum over lists of 1 / (k + rank)."""
    if k < 1:
        raise ValueError("rrf constant must be >= 1")
    fused = []
    for pooled in deduplicate(lists):
        score = 0.0
        for c in pooled.contributing:
            score += 1.0 / (k + c.rank)
        fused.append(FusedDoc(pooled.doc, score, pooled.contributing))
    return _sorted(fused)


def lexical_rerank(
    query: Query, docs: Sequence[PooledDoc], *, k1: float = 1.2, b: float = 0.75
) -> list[FusedDoc]:
    """BM25 of title+content against the original query, statistics taken over ``docs``."""
    bags = [Counter(tokenize(f"{p.doc.title} {p.doc.content}")) for p in docs]
    lengths = [sum(bag.values()) for bag in bags]
    n = len(docs)
    avg = sum(lengths) / n if n else 0.0
    terms = tokenize(query.text)
    df = {t: sum(1 for bag in bags if t in bag) for t in set(terms)}
    out = []
    for pooled, bag, length in zip(docs, bags, lengths):
        score = 0.0
        if avg > 0:
            for t in terms:
                tf = bag.get(t, 0)
                if tf:
                    idf = math.log(1 + (n - df[t] + 0.5) / (df[t] + 0.5))
                    score += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * length / avg))
        out.append(FusedDoc(pooled.doc, score, pooled.contributing))
    return _sorted(out)


def top_k(ranked: Sequence[FusedDoc], k: int) -> list[FusedDoc]:
    if k < 1:
        raise ValueError("K must be >= 1")
    return list(ranked[:k])


class RemoteReranker:
    """Cross-encoder service: POST ``{query, passages}`` -> ``{scores}``."""

    def __init__(
        self,
        endpoint: str,
        *,
        api_key: str | None = None,
        timeout: float = 30.0,
        max_retries: int = 1,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if not endpoint:
            raise ConfigError("reranker endpoint is not configured")
        self.endpoint = endpoint
        self._headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout)
        self.max_retries = max_retries
        self._sleep = sleep

    def score(self, query: str, passages: list[str]) -> list[float]:
        payload, _ = request_json(
            self._client,
            "POST",
            self.endpoint,
            json={"query": query, "passages": passages},
            headers=self._headers,
            max_retries=self.max_retries,
            sleep=self._sleep,
        )
        scores = payload.get("scores") if isinstance(payload, dict) else None
        if not isinstance(scores, list) or len(scores) != len(passages):
            raise ProtocolError("reranker returned a score list of the wrong shape")
        try:
            return [float(s) for s in scores]
        except (TypeError, ValueError) as exc:
            raise ProtocolError("reranker returned non-numeric scores") from exc


@dataclass(frozen=True, slots=True)
class RerankOutcome:
    ranked: list[FusedDoc]
    mode: str
    fallback: bool = False
    error: str | None = None


def remote_rerank(
    query: Query,
    lists: Sequence[RankedList],
    reranker: RemoteReranker | None,
    *,
    rrf_constant: int = 60,
) -> RerankOutcome:
    """Score against the original query remotely; any failure falls back to RRF."""
    pooled = deduplicate(lists)
    if not pooled:
        return RerankOutcome([], "remote")
    try:
        if reranker is None:
            raise ConfigError("no remote reranker configured")
        passages = [f"{p.doc.title}\n{p.doc.content}".strip() for p in pooled]
        scores = reranker.score(query.text, passages)
    except (ServiceError, ConfigError) as exc:
        log.warning("remote rerank failed, using RRF: %s", exc)
        error = f"{type(exc).__name__}: {exc}"
        return RerankOutcome(rrf_fuse(lists, rrf_constant), "remote", True, error)
    fused = [FusedDoc(p.doc, s, p.contributing) for p, s in zip(pooled, scores)]
    return RerankOutcome(_sorted(fused), "remote")


def rerank(
    mode: str,
    query: Query,
    lists: Sequence[RankedList],
    *,
    rrf_constant: int = 60,
    remote: RemoteReranker | None = None,
) -> RerankOutcome:
    if mode == "rrf":
        return RerankOutcome(rrf_fuse(lists, rrf_constant), mode)
    if mode == "lexical":
        return RerankOutcome(lexical_rerank(query, deduplicate(lists)), mode)
    if mode == "remote":
        return remote_rerank(query, lists, remote, rrf_constant=rrf_constant)
    raise ValueError(f"unknown reranker mode {mode!r}")
