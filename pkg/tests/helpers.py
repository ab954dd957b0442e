"""Fixture builders shared by the test modules."""

from __future__ import annotations

from typing import Iterable, Mapping

from dmqr.llm import ScriptedCompleter, prompt_hash, render
from dmqr.model import Query
from dmqr.retrieval import CorpusDoc, LocalRetriever, build_index
from dmqr.rewriting import default_pool
from dmqr.selection import build_selection_prompt


def rewrite_prompt(strategy: str, query: str) -> str:
    return render(default_pool().get(strategy).template, {"query": query})


def rewrite_fixtures(query: str, responses: Mapping[str, str]) -> dict[str, str]:
    """Hash-keyed fixtures answering each strategy's rewrite prompt for ``query``."""
    return {prompt_hash(rewrite_prompt(s, query)): text for s, text in responses.items()}


def selection_fixture(query: str, reply: str, demos, strategies=("GQR", "KWR", "PAR", "CCE")) -> dict[str, str]:
    pool = default_pool().subset(strategies)
    return {prompt_hash(build_selection_prompt(Query(query), pool, demos)): reply}


def scripted(*fixture_maps: Mapping[str, str], default: str | None = "no answer", responder=None) -> ScriptedCompleter:
    merged: dict[str, str] = {}
    for m in fixture_maps:
        merged.update(m)
    return ScriptedCompleter(merged, default=default, responder=responder)


def retriever(docs: Iterable[tuple[str, str, str]]) -> LocalRetriever:
    """``(id, title, text)`` triples to a local retriever."""
    return LocalRetriever(build_index(CorpusDoc(i, t, x) for i, t, x in docs))


class CountingRetriever:
    """Wraps a retriever and counts search calls; optionally fails on chosen queries."""

    def __init__(self, inner, fail_on: Iterable[str] = ()) -> None:
        self.inner = inner
        self.id = inner.id
        self.calls: list[str] = []
        self.fail_on = set(fail_on)

    def search(self, query_text: str, limit: int):
        self.calls.append(query_text)
        if query_text in self.fail_on:
            raise ConnectionError(f"search backend down for {query_text!r}")
        return self.inner.search(query_text, limit)
