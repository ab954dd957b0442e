"""Domain types shared by every stage of the pipeline.

All types are frozen dataclasses and round-trip through ``to_dict`` /
``from_dict`` using lower_snake_case field names.
"""

from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Sequence
from urllib.parse import urlsplit, urlunsplit

from .errors import DuplicateStrategy, EmptyDocument, EmptyQuery, UnknownStrategy

# Strategy ids --------------------------------------------------------------

GQR = "GQR"
KWR = "KWR"
PAR = "PAR"
CCE = "CCE"
BASELINE_REWRITE = "BASELINE_REWRITE"
HYDE = "HYDE"
FUSION_VARIANT = "FUSION_VARIANT"
ORIGINAL = "ORIGINAL"

DMQR_POOL: tuple[str, ...] = (GQR, KWR, PAR, CCE)

_declared: list[str] = [GQR, KWR, PAR, CCE, BASELINE_REWRITE, HYDE, FUSION_VARIANT]
_declared_lock = threading.Lock()


def register_strategy_id(strategy: str) -> None:
    """Append an extension id to the declaration order (no-op if known)."""
    if not strategy or ":" in strategy or strategy == ORIGINAL:
        raise ValueError(f"invalid strategy id {strategy!r}")
    with _declared_lock:
        if strategy not in _declared:
            _declared.append(strategy)


def declared_strategies() -> tuple[str, ...]:
    with _declared_lock:
        return tuple(_declared)


def variant_id(index: int) -> str:
    """Id of the ``index``-th (1-based) paraphrase produced by the fusion baseline."""
    if index < 1:
        raise ValueError("variant index must be >= 1")
    return f"{FUSION_VARIANT}:{index}"


def base_strategy(strategy: str) -> str:
    return strategy.split(":", 1)[0]


def is_registered(strategy: str) -> bool:
    base, _, suffix = strategy.partition(":")
    if suffix and not (base == FUSION_VARIANT and suffix.isdigit() and int(suffix) >= 1):
        return False
    return base in declared_strategies()


def strategy_order(strategy: str) -> tuple[int, int]:
    """Sort key placing strategies in pool declaration order."""
    if not is_registered(strategy):
        raise UnknownStrategy(f"unregistered strategy {strategy!r}")
    base, _, suffix = strategy.partition(":")
    return declared_strategies().index(base), int(suffix or 0)


# Query / rewrites ----------------------------------------------------------


def _default_query_id(text: str) -> str:
    return "q-" + hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True, slots=True)
class Query:
    text: str
    id: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.text, str) or not self.text.strip():
            raise EmptyQuery("query text is empty")
        if not self.id:
            object.__setattr__(self, "id", _default_query_id(self.text))

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "id": self.id}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Query:
        return cls(text=data["text"], id=data.get("id", ""))


@dataclass(frozen=True, slots=True)
class RewrittenQuery:
    strategy: str
    text: str
    source: Query

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise EmptyQuery(f"rewrite for {self.strategy} is empty")
        if not is_registered(self.strategy):
            raise UnknownStrategy(f"unregistered strategy {self.strategy!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"strategy": self.strategy, "text": self.text, "source": self.source.to_dict()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RewrittenQuery:
        return cls(data["strategy"], data["text"], Query.from_dict(data["source"]))


@dataclass(frozen=True, slots=True)
class QuerySet:
    """The original query followed by its rewrites, in pool declaration order."""

    original: Query
    rewrites: tuple[RewrittenQuery, ...] = ()

    def __iter__(self) -> Iterator[tuple[str, str]]:
        """Yield ``(strategy, text)`` pairs, original first."""
        yield ORIGINAL, self.original.text
        for rw in self.rewrites:
            yield rw.strategy, rw.text

    def __len__(self) -> int:
        return 1 + len(self.rewrites)

    @property
    def texts(self) -> list[str]:
        return [text for _, text in self]

    @property
    def strategies(self) -> list[str]:
        return [rw.strategy for rw in self.rewrites]

    def to_dict(self) -> dict[str, Any]:
        return {
            "original": self.original.to_dict(),
            "rewrites": [rw.to_dict() for rw in self.rewrites],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> QuerySet:
        return build_query_set(
            Query.from_dict(data["original"]),
            [RewrittenQuery.from_dict(r) for r in data["rewrites"]],
        )


def build_query_set(original: Query, rewrites: Iterable[RewrittenQuery]) -> QuerySet:
    if not original.text.strip():
        raise EmptyQuery("query text is empty")
    rewrites = list(rewrites)
    seen: set[str] = set()
    for rw in rewrites:
        if rw.strategy in seen:
            raise DuplicateStrategy(f"two rewrites for strategy {rw.strategy}")
        seen.add(rw.strategy)
    ordered = sorted(rewrites, key=lambda rw: strategy_order(rw.strategy))
    return QuerySet(original, tuple(ordered))


# Documents -----------------------------------------------------------------


def normalize_url(url: str) -> str:
    parts = urlsplit(url.strip())
    path = parts.path
    while path.endswith("/"):
        path = path[:-1]
    return urlunsplit((parts.scheme.lower(), parts.netloc.lower(), path, parts.query, ""))


def document_key(url: str | None, content: str) -> str:
    """Dedup identity: normalized url when present, else sha256 of the content."""
    if url and url.strip():
        return "url:" + normalize_url(url)
    normalized = " ".join((content or "").split())
    if not normalized:
        raise EmptyDocument("document has neither url nor content")
    return "sha256:" + hashlib.sha256(normalized.encode("utf-8")).hexdigest()


@dataclass(frozen=True, slots=True)
class Document:
    key: str
    title: str
    content: str
    url: str | None = None
    retrieved_by: str = ORIGINAL
    retrieval_rank: int = 1
    # corpus id for documents coming from a local index; used by gold-label judging
    source_id: str | None = None

    def __post_init__(self) -> None:
        if self.retrieval_rank < 1:
            raise ValueError(f"retrieval_rank must be >= 1, got {self.retrieval_rank}")

    @classmethod
    def create(
        cls,
        title: str,
        content: str,
        url: str | None = None,
        *,
        retrieved_by: str = ORIGINAL,
        retrieval_rank: int = 1,
        source_id: str | None = None,
    ) -> Document:
        url = url or None
        return cls(
            document_key(url, content),
            title,
            content,
            url,
            retrieved_by,
            retrieval_rank,
            source_id,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "key": self.key,
            "title": self.title,
            "content": self.content,
            "url": self.url,
            "retrieved_by": self.retrieved_by,
            "retrieval_rank": self.retrieval_rank,
            "source_id": self.source_id,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Document:
        return cls(
            key=data["key"],
            title=data.get("title", ""),
            content=data.get("content", ""),
            url=data.get("url"),
            retrieved_by=data.get("retrieved_by", ORIGINAL),
            retrieval_rank=int(data.get("retrieval_rank", 1)),
            source_id=data.get("source_id"),
        )


@dataclass(frozen=True, slots=True)
class RankedList:
    query: str
    docs: tuple[Document, ...] = ()

    def __post_init__(self) -> None:
        keys = set()
        for i, doc in enumerate(self.docs, start=1):
            if doc.retrieval_rank != i:
                raise ValueError(f"rank gap: position {i} carries rank {doc.retrieval_rank}")
            if doc.key in keys:
                raise ValueError(f"duplicate key {doc.key} in ranked list")
            keys.add(doc.key)

    @classmethod
    def from_documents(
        cls, query: str, docs: Sequence[Document], *, retrieved_by: str | None = None
    ) -> RankedList:
        """Re-rank ``docs`` positionally, dropping repeated keys (first wins)."""
        out: list[Document] = []
        seen: set[str] = set()
        for doc in docs:
            if doc.key in seen:
                continue
            seen.add(doc.key)
            out.append(
                Document(
                    doc.key,
                    doc.title,
                    doc.content,
                    doc.url,
                    retrieved_by or doc.retrieved_by,
                    len(out) + 1,
                    doc.source_id,
                )
            )
        return cls(query, tuple(out))

    def tagged(self, strategy: str) -> RankedList:
        return RankedList.from_documents(self.query, self.docs, retrieved_by=strategy)

    def __len__(self) -> int:
        return len(self.docs)

    def to_dict(self) -> dict[str, Any]:
        return {"query": self.query, "docs": [d.to_dict() for d in self.docs]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RankedList:
        return cls(data["query"], tuple(Document.from_dict(d) for d in data["docs"]))


# Configuration -------------------------------------------------------------

SELECTION_MODES = ("fixed_all", "adaptive")
RERANKER_MODES = ("rrf", "lexical", "remote")


@dataclass(frozen=True, slots=True)
class PipelineConfig:
    per_query_limit: int = 10
    context_size: int = 5
    rrf_constant: int = 60
    concurrency_bound: int = 4
    selection_mode: str = "fixed_all"
    reranker_mode: str = "rrf"
    # strategies used in fixed_all mode, and the candidate pool in adaptive mode
    strategies: tuple[str, ...] = DMQR_POOL
    # >0 switches the rewriting stage to one batched paraphrase call
    fusion_count: int = 0
    # False reproduces single-query RAG: only the rewrites are sent to retrieval
    retrieve_original: bool = True
    context_char_budget: int = 1200
    answer_temperature: float = 0.2
    retrieval_budget_s: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "strategies", tuple(self.strategies))
        for name in ("per_query_limit", "context_size", "rrf_constant", "concurrency_bound",
                     "context_char_budget"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.fusion_count < 0:
            raise ValueError("fusion_count must be >= 0")
        if self.selection_mode not in SELECTION_MODES:
            raise ValueError(f"selection_mode must be one of {SELECTION_MODES}")
        if self.reranker_mode not in RERANKER_MODES:
            raise ValueError(f"reranker_mode must be one of {RERANKER_MODES}")
        if len(set(self.strategies)) != len(self.strategies):
            raise DuplicateStrategy("strategies listed twice in config")
        for s in self.strategies:
            if not is_registered(s):
                raise UnknownStrategy(f"unregistered strategy {s!r}")
        if self.selection_mode == "adaptive" and not self.strategies:
            raise ValueError("adaptive selection needs a non-empty strategy pool")
        if not 0.0 <= self.answer_temperature <= 1.0:
            raise ValueError("answer_temperature must be in [0, 1]")
        max_queries = max(len(self.strategies), self.fusion_count) + 1
        if self.context_size > self.per_query_limit * max_queries:
            raise ValueError(
                f"context_size {self.context_size} exceeds per_query_limit x query count "
                f"({self.per_query_limit} x {max_queries})"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_query_limit": self.per_query_limit,
            "context_size": self.context_size,
            "rrf_constant": self.rrf_constant,
            "concurrency_bound": self.concurrency_bound,
            "selection_mode": self.selection_mode,
            "reranker_mode": self.reranker_mode,
            "strategies": list(self.strategies),
            "fusion_count": self.fusion_count,
            "retrieve_original": self.retrieve_original,
            "context_char_budget": self.context_char_budget,
            "answer_temperature": self.answer_temperature,
            "retrieval_budget_s": self.retrieval_budget_s,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> PipelineConfig:
        data = dict(data)
        if "strategies" in data:
            data["strategies"] = tuple(data["strategies"])
        return cls(**data)


_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop empty tokens."""
    return _TOKEN.findall(text.lower())


def truncate_at_whitespace(text: str, limit: int) -> str:
    """Cut ``text`` to at most ``limit`` chars, preferring the last whitespace."""
    if len(text) <= limit:
        return text
    head = text[: limit + 1]
    cut = max(head.rfind(" "), head.rfind("\n"), head.rfind("\t"))
    if cut <= 0:
        return text[:limit]
    return text[:cut].rstrip()
