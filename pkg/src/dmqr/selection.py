"""Per-query adaptive choice of rewriting strategies."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

from .errors import ConfigError
from .llm import REWRITE_TEMPERATURE, ChatRequest, Completer, PromptTemplate, load_template, render
from .model import Query, strategy_order
from .rewriting import StrategyDescriptor

Demonstration = tuple[str, tuple[str, ...]]


@dataclass(frozen=True, slots=True)
class SelectionResult:
    chosen: tuple[str, ...]
    raw: str
    fallback_used: bool

    def __post_init__(self) -> None:
        if not self.chosen:
            raise ValueError("selection must choose at least one strategy")
        if len(set(self.chosen)) != len(self.chosen):
            raise ValueError("selection contains duplicates")

    def to_dict(self) -> dict[str, Any]:
        return {"chosen": list(self.chosen), "raw": self.raw, "fallback_used": self.fallback_used}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SelectionResult:
        return cls(tuple(data["chosen"]), data["raw"], bool(data["fallback_used"]))


def load_demonstrations(path: str | Path | None = None) -> list[Demonstration]:
    """Read ``[{"query": ..., "chosen": [...]}, ...]``; bundled set when ``path`` is None."""
    if path is None:
        text = resources.files("dmqr").joinpath("templates", "demonstrations.json").read_text(
            encoding="utf-8"
        )
    else:
        text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
        demos = [(str(d["query"]), tuple(str(s) for s in d["chosen"])) for d in data]
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"malformed demonstrations file {path}: {exc}") from exc
    return demos


def _describe(pool: Sequence[StrategyDescriptor]) -> str:
    return "\n".join(f"- {d.id} ({d.name}): {d.description}" for d in pool)


def _demos(demos: Sequence[Demonstration]) -> str:
    if not demos:
        return "(none)"
    return "\n\n".join(f"Query: {q}\nChosen: {', '.join(chosen)}" for q, chosen in demos)


def _patterns(descriptor: StrategyDescriptor) -> list[re.Pattern[str]]:
    name = r"[\s\-]+".join(re.escape(w) for w in re.split(r"[\s\-]+", descriptor.name.strip()))
    return [
        re.compile(rf"(?<![^\W_]){re.escape(descriptor.id)}(?![^\W_])", re.IGNORECASE),
        re.compile(rf"(?<![^\W_]){name}(?![^\W_])", re.IGNORECASE),
    ]


def parse_selection(raw: str, pool: Sequence[StrategyDescriptor]) -> tuple[str, ...]:
    """Strategy ids mentioned anywhere in ``raw``, deduplicated, in pool order."""
    found = [d.id for d in pool if any(p.search(raw) for p in _patterns(d))]
    return tuple(sorted(found, key=strategy_order))


def build_selection_prompt(
    query: Query,
    pool: Sequence[StrategyDescriptor],
    demos: Sequence[Demonstration],
    template: PromptTemplate | None = None,
) -> str:
    template = template or load_template("selection")
    return render(
        template,
        {
            "strategy_descriptions": _describe(pool),
            "demonstrations": _demos(demos),
            "query": query.text,
        },
    )


def select_strategies(
    query: Query,
    pool: Sequence[StrategyDescriptor],
    demos: Sequence[Demonstration],
    completer: Completer,
    *,
    template: PromptTemplate | None = None,
) -> SelectionResult:
    """Ask the LLM which strategies suit ``query``.

    Unparseable output falls back to the whole pool. Completer errors
    propagate to the caller.
    """
    pool = list(pool)
    if not pool:
        raise ValueError("selection pool is empty")
    prompt = build_selection_prompt(query, pool, demos, template)
    raw = completer.complete(ChatRequest(prompt, temperature=REWRITE_TEMPERATURE)).text
    chosen = parse_selection(raw, pool)
    if not chosen:
        return SelectionResult(tuple(sorted((d.id for d in pool), key=strategy_order)), raw, True)
    return SelectionResult(chosen, raw, False)
