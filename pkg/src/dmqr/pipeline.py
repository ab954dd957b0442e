"""End-to-end orchestration: select, rewrite, retrieve, fuse, answer."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

from .errors import AuthError, ParseFailure, PipelineError, ServiceError
from .llm import ChatRequest, Completer, PromptTemplate, load_template, render
from .model import (
    BASELINE_REWRITE,
    DMQR_POOL,
    HYDE,
    PipelineConfig,
    Query,
    QuerySet,
    RankedList,
    RewrittenQuery,
    build_query_set,
    truncate_at_whitespace,
    variant_id,
)
from .ranking import FusedDoc, RemoteReranker, deduplicate, rerank, top_k
from .retrieval.cache import Retriever, SearchCache, cached_search_with_status
from .rewriting import (
    RewriteRecord,
    StrategyPool,
    default_pool,
    rewrite_fusion_variants,
    rewrite_many,
)
from .selection import Demonstration, SelectionResult, load_demonstrations, select_strategies
from .tracing import DiversityStats, Tracer, diversity_stats

log = logging.getLogger(__name__)

METHODS = ("OQR", "REWRITE", "HYDE", "RAG_FUSION", "DMQR", "DMQR_ADAPTIVE")
FUSION_VARIANT_COUNT = 4
NO_DOCUMENTS = "(no documents retrieved)"


def method_config(method: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Strategy configuration a named method runs with, on top of ``base``."""
    base = base or PipelineConfig()
    method = method.upper()
    fixed = dict(selection_mode="fixed_all", fusion_count=0, retrieve_original=True)
    if method == "OQR":
        return dataclasses.replace(base, strategies=(), **fixed)
    if method in ("REWRITE", "HYDE"):
        strategy = BASELINE_REWRITE if method == "REWRITE" else HYDE
        return dataclasses.replace(base, strategies=(strategy,), **{**fixed, "retrieve_original": False})
    if method == "RAG_FUSION":
        return dataclasses.replace(
            base, strategies=(), reranker_mode="rrf", **{**fixed, "fusion_count": FUSION_VARIANT_COUNT}
        )
    if method == "DMQR":
        return dataclasses.replace(base, strategies=DMQR_POOL, **fixed)
    if method == "DMQR_ADAPTIVE":
        return dataclasses.replace(base, strategies=DMQR_POOL, **{**fixed, "selection_mode": "adaptive"})
    raise ValueError(f"unknown method {method!r}; valid: {', '.join(METHODS)}")


@dataclass
class Deps:
    completer: Completer
    retriever: Retriever
    cache: SearchCache | None = None
    remote_reranker: RemoteReranker | None = None
    pool: StrategyPool = field(default_factory=default_pool)
    demos: Sequence[Demonstration] | None = None
    answer_template: PromptTemplate | None = None
    tracer_stream: Any = None


@dataclass(frozen=True, slots=True)
class Answer:
    text: str
    context_keys: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "context_keys": list(self.context_keys)}


@dataclass(frozen=True, slots=True)
class RetrievalRecord:
    strategy: str
    query: str
    ranked: RankedList
    cache_hit: bool = False
    error: str | None = None
    skipped: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy,
            "query": self.query,
            "docs": [d.to_dict() for d in self.ranked.docs],
            "cache_hit": self.cache_hit,
            "error": self.error,
            "skipped": self.skipped,
        }


@dataclass
class PipelineTrace:
    query: Query
    config: PipelineConfig
    selection: SelectionResult | None
    rewrites: list[RewriteRecord]
    query_set: QuerySet
    retrievals: list[RetrievalRecord]
    candidates: int
    survivors: int
    reranker: dict[str, Any]
    fused: list[FusedDoc]
    context: list[FusedDoc]
    answer: Answer
    diversity: DiversityStats
    flags: list[dict[str, Any]]
    timings: list[dict[str, Any]] = field(default_factory=list)

    @property
    def retrieval_calls(self) -> int:
        return sum(1 for r in self.retrievals if not r.skipped)

    @property
    def cache_hits(self) -> int:
        return sum(1 for r in self.retrievals if r.cache_hit)

    def to_dict(self, *, timings: bool = True) -> dict[str, Any]:
        """JSON form. Everything except ``timings`` is deterministic."""
        data = {
            "query": self.query.to_dict(),
            "config": self.config.to_dict(),
            "selection": self.selection.to_dict() if self.selection else None,
            "rewrites": [r.to_dict() for r in self.rewrites],
            "query_set": self.query_set.to_dict(),
            "retrievals": [r.to_dict() for r in self.retrievals],
            "retrieval_calls": self.retrieval_calls,
            "dedup": {"candidates": self.candidates, "survivors": self.survivors},
            "reranker": self.reranker,
            "fused": [f.to_dict() for f in self.fused],
            "context": [f.doc.key for f in self.context],
            "answer": self.answer.to_dict(),
            "diversity": self.diversity.to_dict(),
            "flags": self.flags,
            "cache": {
                "hits": self.cache_hits,
                "misses": sum(1 for r in self.retrievals if not r.cache_hit and not r.skipped),
            },
        }
        if timings:
            data["timings"] = self.timings
        return data

    def to_json(self, *, timings: bool = True) -> str:
        return json.dumps(self.to_dict(timings=timings), ensure_ascii=False, sort_keys=True, indent=2)


def assemble_context(
    query: Query,
    docs: Sequence[FusedDoc],
    k: int,
    *,
    char_budget: int = 1200,
    template: PromptTemplate | None = None,
) -> str:
    """Answer prompt: the question followed by the first ``k`` documents, numbered."""
    template = template or load_template("answer")
    blocks = []
    for i, fused in enumerate(docs[:k], start=1):
        content = truncate_at_whitespace(" ".join(fused.doc.content.split()), char_budget)
        blocks.append(f"[{i}] {fused.doc.title}\n{content}")
    context = "\n\n".join(blocks) if blocks else NO_DOCUMENTS
    return render(template, {"query": query.text, "context": context})


def _retrieve_all(
    members: list[tuple[str, str]], config: PipelineConfig, deps: Deps, tracer: Tracer
) -> list[RetrievalRecord]:
    deadline = (
        time.monotonic() + config.retrieval_budget_s if config.retrieval_budget_s is not None else None
    )

    def one(strategy: str, text: str) -> RetrievalRecord:
        empty = RankedList(text)
        if deadline is not None and time.monotonic() > deadline:
            return RetrievalRecord(strategy, text, empty, skipped=True, error="retrieval budget exhausted")
        start = time.monotonic()
        try:
            ranked, hit = cached_search_with_status(
                deps.cache, deps.retriever, text, config.per_query_limit
            )
        except Exception as exc:  # any retriever failure degrades to an empty list
            return RetrievalRecord(strategy, text, empty, error=f"{type(exc).__name__}: {exc}")
        finally:
            tracer.timing(f"retrieve:{strategy}", start, time.monotonic())
        ranked = RankedList(ranked.query, ranked.docs[: config.per_query_limit])
        return RetrievalRecord(strategy, text, ranked.tagged(strategy), cache_hit=hit)

    if config.concurrency_bound <= 1 or len(members) <= 1:
        return [one(s, t) for s, t in members]
    with ThreadPoolExecutor(max_workers=config.concurrency_bound) as executor:
        futures = [executor.submit(one, s, t) for s, t in members]
        # aggregation follows query-set order, not completion order
        return [f.result() for f in futures]


def run(query: Query, config: PipelineConfig, deps: Deps) -> PipelineTrace:
    tracer = Tracer(stream=deps.tracer_stream)
    pool = deps.pool
    flags: list[dict[str, Any]] = []

    # selection
    selection = None
    chosen: tuple[str, ...] = tuple(config.strategies)
    with tracer.stage("selection"):
        if config.fusion_count == 0 and config.selection_mode == "adaptive":
            demos = deps.demos if deps.demos is not None else load_demonstrations()
            try:
                selection = select_strategies(query, pool.subset(config.strategies), demos, deps.completer)
                chosen = selection.chosen
                if selection.fallback_used:
                    flags.append({"flag": "selection_fallback", "raw": selection.raw})
            except AuthError as exc:
                raise PipelineError(f"selection: {exc}") from exc
            except ServiceError as exc:
                flags.append({"flag": "selection_error", "error": f"{type(exc).__name__}: {exc}"})

    # rewriting
    with tracer.stage("rewriting"):
        if config.fusion_count > 0:
            rewrites = _fusion_rewrites(query, config, deps, flags)
        else:
            try:
                rewrites = rewrite_many(
                    chosen, query, deps.completer, pool, max_workers=config.concurrency_bound
                )
            except AuthError as exc:
                raise PipelineError(f"rewriting: {exc}") from exc
        for record in rewrites:
            if record.fallback:
                flags.append(
                    {"flag": "rewrite_fallback", "strategy": record.rewrite.strategy, "error": record.error}
                )
            if record.truncated:
                flags.append({"flag": "rewrite_truncated", "strategy": record.rewrite.strategy})
        query_set = build_query_set(query, [r.rewrite for r in rewrites])
        by_strategy = {r.rewrite.strategy: r for r in rewrites}
        rewrites = [by_strategy[s] for s in query_set.strategies]

    # retrieval fan-out
    members = list(query_set)
    if not config.retrieve_original and len(members) > 1:
        members = members[1:]
    with tracer.stage("retrieval"):
        retrievals = _retrieve_all(members, config, deps, tracer)
    for r in retrievals:
        if r.skipped:
            flags.append({"flag": "retrieval_skipped", "strategy": r.strategy})
        elif r.error:
            flags.append({"flag": "retrieval_error", "strategy": r.strategy, "error": r.error})

    lists = [r.ranked for r in retrievals]
    candidates = sum(len(lst) for lst in lists)

    with tracer.stage("rerank"):
        survivors = len(deduplicate(lists))
        outcome = rerank(
            config.reranker_mode,
            query,
            lists,
            rrf_constant=config.rrf_constant,
            remote=deps.remote_reranker,
        )
    if outcome.fallback:
        flags.append({"flag": "reranker_fallback", "error": outcome.error})
    context = top_k(outcome.ranked, config.context_size)

    with tracer.stage("answer"):
        prompt = assemble_context(
            query,
            context,
            config.context_size,
            char_budget=config.context_char_budget,
            template=deps.answer_template,
        )
        try:
            response = deps.completer.complete(
                ChatRequest(prompt, temperature=config.answer_temperature)
            )
        except ServiceError as exc:
            raise PipelineError(f"answer generation failed: {type(exc).__name__}: {exc}") from exc
    answer = Answer(response.text.strip(), tuple(f.doc.key for f in context))

    diversity = diversity_stats(query_set, [(r.strategy, r.ranked) for r in retrievals])
    for f in flags:
        tracer.event("flag", **f)
    return PipelineTrace(
        query=query,
        config=config,
        selection=selection,
        rewrites=rewrites,
        query_set=query_set,
        retrievals=retrievals,
        candidates=candidates,
        survivors=survivors,
        reranker={"mode": outcome.mode, "fallback": outcome.fallback, "error": outcome.error},
        fused=outcome.ranked,
        context=context,
        answer=answer,
        diversity=diversity,
        flags=flags,
        timings=[t.to_dict() for t in tracer.timings],
    )


def _fusion_rewrites(
    query: Query, config: PipelineConfig, deps: Deps, flags: list[dict[str, Any]]
) -> list[RewriteRecord]:
    try:
        variants = rewrite_fusion_variants(query, config.fusion_count, deps.completer, deps.pool)
    except AuthError as exc:
        raise PipelineError(f"rewriting: {exc}") from exc
    except (ParseFailure, ServiceError) as exc:
        error = f"{type(exc).__name__}: {exc}"
        fallback = RewrittenQuery(variant_id(1), query.text, query)
        return [RewriteRecord(fallback, getattr(exc, "raw", None), fallback=True, error=error)]
    if len(variants) < config.fusion_count:
        flags.append(
            {"flag": "fusion_shortfall", "requested": config.fusion_count, "parsed": len(variants)}
        )
    return [RewriteRecord(v, None) for v in variants]


__all__ = [
    "Answer",
    "Deps",
    "METHODS",
    "PipelineTrace",
    "RetrievalRecord",
    "assemble_context",
    "method_config",
    "run",
]
