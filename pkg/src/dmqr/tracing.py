"""Stage timing, structured events and rewrite-diversity reporting."""

from __future__ import annotations

import json
import logging
import sys
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Iterator, Sequence

from .model import QuerySet, RankedList, tokenize

log = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class StageTiming:
    stage: str
    start: float
    end: float

    def __post_init__(self) -> None:
        if self.end < self.start:
            raise ValueError("stage ends before it starts")

    @property
    def wall_ms(self) -> float:
        return (self.end - self.start) * 1000.0

    def to_dict(self) -> dict[str, Any]:
        return {"stage": self.stage, "start": self.start, "end": self.end, "wall_ms": self.wall_ms}


class Tracer:
    """Append-only event sink. Safe to share between worker threads."""

    def __init__(self, *, stream=None) -> None:
        self._lock = threading.Lock()
        self._events: list[dict[str, Any]] = []
        self._timings: list[StageTiming] = []
        self._flags: list[dict[str, Any]] = []
        self._stream = stream

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        start = time.monotonic()
        try:
            yield
        finally:
            self.timing(name, start, time.monotonic())

    def timing(self, name: str, start: float, end: float) -> None:
        timing = StageTiming(name, start, end)
        with self._lock:
            self._timings.append(timing)
        if self._stream is not None:
            self.event("timing", stage=name, wall_ms=round(timing.wall_ms, 3))

    def event(self, kind: str, **data: Any) -> None:
        record = {"event": kind, **data}
        with self._lock:
            self._events.append(record)
        if self._stream is not None:
            self._stream.write(json.dumps(record, sort_keys=True, default=str) + "\n")

    def flag(self, name: str, **detail: Any) -> None:
        """Record a degradation (fallback, skipped call, swallowed error)."""
        record = {"flag": name, **detail}
        with self._lock:
            self._flags.append(record)
        log.warning("degraded: %s %s", name, detail)
        self.event("flag", name=name, **detail)

    @property
    def flags(self) -> list[dict[str, Any]]:
        with self._lock:
            return list(self._flags)

    @property
    def events(self) -> list[dict[str, Any]]:
        with self._lock:
            return list(self._events)

    @property
    def timings(self) -> list[StageTiming]:
        with self._lock:
            return list(self._timings)


def stderr_tracer() -> Tracer:
    return Tracer(stream=sys.stderr)


# Diversity -----------------------------------------------------------------


def jaccard(a: str, b: str) -> float:
    sa, sb = set(tokenize(a)), set(tokenize(b))
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


@dataclass(frozen=True, slots=True)
class DiversityStats:
    labels: tuple[str, ...]
    jaccard: tuple[tuple[float, ...], ...]
    unique_docs: dict[str, int]

    def to_dict(self) -> dict[str, Any]:
        return {
            "labels": list(self.labels),
            "jaccard": [list(row) for row in self.jaccard],
            "unique_docs": dict(self.unique_docs),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> DiversityStats:
        return cls(
            tuple(data["labels"]),
            tuple(tuple(row) for row in data["jaccard"]),
            dict(data["unique_docs"]),
        )


def diversity_stats(
    query_set: QuerySet, per_query_lists: Sequence[tuple[str, RankedList]]
) -> DiversityStats:
    """Pairwise token Jaccard over the query set and per-strategy unique documents.

    ``per_query_lists`` pairs a strategy label with the list it retrieved. A
    document counts as unique to a strategy when no other list contains it.
    """
    labels = tuple(label for label, _ in query_set)
    texts = query_set.texts
    n = len(texts)
    matrix = [[1.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            matrix[i][j] = matrix[j][i] = jaccard(texts[i], texts[j])

    holders: dict[str, set[str]] = {}
    for label, ranked in per_query_lists:
        for doc in ranked.docs:
            holders.setdefault(doc.key, set()).add(label)
    unique = {label: 0 for label, _ in per_query_lists}
    for owners in holders.values():
        if len(owners) == 1:
            unique[next(iter(owners))] += 1
    return DiversityStats(labels, tuple(tuple(r) for r in matrix), unique)
