"""Strategy pool and the per-strategy query rewriters."""

from __future__ import annotations

import functools
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from . import model
from .errors import AuthError, DuplicateStrategy, ParseFailure, ServiceError, UnknownStrategy
from .llm import REWRITE_TEMPERATURE, ChatRequest, Completer, PromptTemplate, load_template, render
from .model import (
    BASELINE_REWRITE,
    CCE,
    FUSION_VARIANT,
    GQR,
    HYDE,
    KWR,
    PAR,
    Query,
    RewrittenQuery,
    truncate_at_whitespace,
    variant_id,
)

log = logging.getLogger(__name__)

MAX_REWRITE_CHARS = 512

# Output parsers ------------------------------------------------------------

_LABEL = re.compile(
    r"^\s*(?:the\s+)?(?:rewritten|reduced|refined|revised|new|core|search)?\s*"
    r"(?:query|question|rewrite)\s*:\s*",
    re.IGNORECASE,
)
_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+")
_QUOTES = "\"'“”‘’`"


def _clean(text: str) -> str:
    text = _BULLET.sub("", text)
    text = _LABEL.sub("", text)
    return " ".join(text.strip().strip(_QUOTES).split())


def parse_line(raw: str) -> str:
    """First non-empty line, minus labels, bullets and wrapping quotes."""
    for line in raw.splitlines():
        cleaned = _clean(line)
        if cleaned:
            return cleaned
    raise ParseFailure("no usable line in completion", raw)


_KEYWORD_LABEL = re.compile(r"^\s*keywords?\s*:\s*(.*)$", re.IGNORECASE)


def parse_keywords(raw: str) -> str:
    """Accept ``KEYWORDS: a, b`` or a bare comma/space separated list."""
    lines = [line for line in raw.splitlines() if line.strip()]
    body = None
    for line in lines:
        match = _KEYWORD_LABEL.match(line)
        if match:
            body = match.group(1)
            break
    if body is None:
        body = lines[0] if lines else ""
    parts = [_clean(p) for p in re.split(r"[,;]", body)]
    joined = " ".join(p for p in parts if p)
    if not joined:
        raise ParseFailure("no keywords in completion", raw)
    return joined


def parse_passage(raw: str) -> str:
    text = raw.strip()
    if not text:
        raise ParseFailure("empty passage", raw)
    return text


_NUMBERED = re.compile(r"^\s*\d+\s*[.):]\s*(.*)$")
_ALNUM = re.compile(r"[^\W_]")


def parse_numbered(raw: str, count: int) -> list[str]:
    """Split a numbered list; entries without any alphanumeric char are dropped."""
    lines = raw.splitlines()
    numbered = [m.group(1) for m in map(_NUMBERED.match, lines) if m]
    if not numbered:
        numbered = lines
    out = []
    for item in numbered:
        cleaned = " ".join(item.strip().strip(_QUOTES).split())
        if _ALNUM.search(cleaned):
            out.append(cleaned)
    return out[:count]


PARSERS: dict[str, Callable[[str], str]] = {
    "line": parse_line,
    "keywords": parse_keywords,
    "passage": parse_passage,
}


# Pool ----------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class StrategyDescriptor:
    id: str
    name: str
    description: str
    template: PromptTemplate
    parser: str

    def __post_init__(self) -> None:
        if not self.description.strip():
            raise ValueError(f"strategy {self.id} needs a description")
        if self.parser not in PARSERS and self.parser != "numbered":
            raise ValueError(f"unknown parser {self.parser!r}")


class StrategyPool:
    """Ordered registry of rewriting strategies.

    Iteration follows registration order, which is also the order the
    rewrites take in a query set.
    """

    def __init__(self, descriptors: Iterable[StrategyDescriptor] = ()) -> None:
        self._items: dict[str, StrategyDescriptor] = {}
        for d in descriptors:
            self.register(d)

    def register(self, descriptor: StrategyDescriptor) -> None:
        if descriptor.id in self._items:
            raise DuplicateStrategy(f"strategy {descriptor.id} already registered")
        model.register_strategy_id(descriptor.id)
        self._items[descriptor.id] = descriptor

    def get(self, strategy: str) -> StrategyDescriptor:
        try:
            return self._items[strategy]
        except KeyError:
            raise UnknownStrategy(
                f"unknown strategy {strategy!r}; valid: {', '.join(self._items)}"
            ) from None

    def __contains__(self, strategy: object) -> bool:
        return strategy in self._items

    def __iter__(self):
        return iter(self._items.values())

    def __len__(self) -> int:
        return len(self._items)

    @property
    def ids(self) -> list[str]:
        return list(self._items)

    def subset(self, ids: Iterable[str]) -> list[StrategyDescriptor]:
        wanted = set(ids)
        for s in wanted:
            self.get(s)
        return [d for d in self if d.id in wanted]


_BUILTIN: list[tuple[str, str, str, str]] = [
    (
        GQR,
        "General Query Rewriting",
        "Refines the query while keeping all relevant information and removing noise such as "
        "typos, filler words and chit-chat. Use for noisy or badly phrased queries.",
        "line",
    ),
    (
        KWR,
        "Keyword Rewriting",
        "Extracts all keywords (nouns, names, subjects) from the query into a search-engine "
        "friendly keyword list. Use for long natural-language questions about specific entities.",
        "keywords",
    ),
    (
        PAR,
        "Pseudo-Answer Rewriting",
        "Writes a hypothetical answer and searches with it, bridging the gap between question "
        "wording and answer wording. Use for factual questions, knowledge questions and "
        "questions whose answers use different vocabulary than the question.",
        "passage",
    ),
    (
        CCE,
        "Core Content Extraction",
        "Discards superfluous details and keeps only the core information need. Use for "
        "verbose queries with background stories or many side details.",
        "line",
    ),
    (
        BASELINE_REWRITE,
        "Query Rewrite",
        "Single general-purpose rewrite of the question into a better search query.",
        "line",
    ),
    (
        HYDE,
        "Hypothetical Document",
        "Generates a pseudo-document capturing the semantics of the target document and "
        "retrieves with it.",
        "passage",
    ),
    (
        FUSION_VARIANT,
        "Fusion Variants",
        "Several paraphrased search queries produced by one call, fused by reciprocal rank.",
        "numbered",
    ),
]


@functools.lru_cache(maxsize=8)
def _cached_pool(templates_dir: str | None) -> StrategyPool:
    names = {FUSION_VARIANT: "fusion_variants"}
    return StrategyPool(
        StrategyDescriptor(
            sid, name, desc, load_template(names.get(sid, sid.lower()), templates_dir), parser
        )
        for sid, name, desc, parser in _BUILTIN
    )


def default_pool(templates_dir: str | Path | None = None) -> StrategyPool:
    """Built-in strategies; templates may be overridden from ``templates_dir``."""
    return _cached_pool(str(templates_dir) if templates_dir is not None else None)


# Rewriting -----------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class RewriteRecord:
    """What happened when one strategy rewrote one query."""

    rewrite: RewrittenQuery
    raw: str | None
    fallback: bool = False
    truncated: bool = False
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.rewrite.strategy,
            "text": self.rewrite.text,
            "raw": self.raw,
            "fallback": self.fallback,
            "truncated": self.truncated,
            "error": self.error,
        }


def _finish(strategy: str, text: str, query: Query) -> tuple[RewrittenQuery, bool]:
    clipped = truncate_at_whitespace(text, MAX_REWRITE_CHARS)
    return RewrittenQuery(strategy, clipped, query), clipped != text


def _rewrite(
    strategy: str, query: Query, completer: Completer, pool: StrategyPool
) -> tuple[RewrittenQuery, str, bool]:
    descriptor = pool.get(strategy)
    if descriptor.parser == "numbered":
        raise UnknownStrategy(f"{strategy} is produced by rewrite_fusion_variants")
    prompt = render(descriptor.template, {"query": query.text})
    raw = completer.complete(ChatRequest(prompt, temperature=REWRITE_TEMPERATURE)).text
    text = PARSERS[descriptor.parser](raw)
    rewritten, truncated = _finish(strategy, text, query)
    if truncated:
        log.info("%s rewrite truncated to %d chars", strategy, MAX_REWRITE_CHARS)
    return rewritten, raw, truncated


def rewrite(
    strategy: str, query: Query, completer: Completer, pool: StrategyPool | None = None
) -> RewrittenQuery:
    """Rewrite ``query`` with one strategy. Raises ParseFailure on unusable output."""
    return _rewrite(strategy, query, completer, pool or default_pool())[0]


def rewrite_baseline(
    kind: str, query: Query, completer: Completer, pool: StrategyPool | None = None
) -> RewrittenQuery:
    if kind not in (BASELINE_REWRITE, HYDE):
        raise UnknownStrategy(f"{kind!r} is not a baseline rewriter")
    return rewrite(kind, query, completer, pool)


def rewrite_with_fallback(
    strategy: str,
    query: Query,
    completer: Completer,
    pool: StrategyPool | None = None,
    *,
    tolerate_service_errors: bool = True,
) -> RewriteRecord:
    """Like :func:`rewrite`, but falls back to the original query text.

    ParseFailure always falls back. Service errors other than auth failures
    fall back too unless ``tolerate_service_errors`` is False.
    """
    pool = pool or default_pool()
    try:
        rewritten, raw, truncated = _rewrite(strategy, query, completer, pool)
        return RewriteRecord(rewritten, raw, truncated=truncated)
    except ParseFailure as exc:
        error, raw = f"ParseFailure: {exc}", exc.raw
    except AuthError:
        raise
    except ServiceError as exc:
        if not tolerate_service_errors:
            raise
        error, raw = f"{type(exc).__name__}: {exc}", None
    log.warning("%s rewrite fell back to the original query (%s)", strategy, error)
    fallback, truncated = _finish(strategy, query.text, query)
    return RewriteRecord(fallback, raw, fallback=True, truncated=truncated, error=error)


def rewrite_many(
    strategies: Sequence[str],
    query: Query,
    completer: Completer,
    pool: StrategyPool | None = None,
    *,
    max_workers: int = 4,
) -> list[RewriteRecord]:
    """Run several strategies concurrently; results come back in pool order."""
    pool = pool or default_pool()
    ordered = [d.id for d in pool.subset(strategies)]
    if max_workers <= 1 or len(ordered) <= 1:
        return [rewrite_with_fallback(s, query, completer, pool) for s in ordered]
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        futures = [executor.submit(rewrite_with_fallback, s, query, completer, pool) for s in ordered]
        return [f.result() for f in futures]


def rewrite_fusion_variants(
    query: Query, count: int, completer: Completer, pool: StrategyPool | None = None
) -> list[RewrittenQuery]:
    """One call asking for ``count`` paraphrases; returns what parsed (at least one)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    pool = pool or default_pool()
    template = pool.get(FUSION_VARIANT).template
    prompt = render(template, {"query": query.text, "count": str(count)})
    raw = completer.complete(ChatRequest(prompt, temperature=REWRITE_TEMPERATURE)).text
    texts = parse_numbered(raw, count)
    if not texts:
        raise ParseFailure("no variants parsed", raw)
    if len(texts) < count:
        log.info("fusion variants shortfall: wanted %d, parsed %d", count, len(texts))
    return [_finish(variant_id(i), t, query)[0] for i, t in enumerate(texts, start=1)]
