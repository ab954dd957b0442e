"""Content-addressed on-disk cache of search results."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol

from ..model import RankedList

log = logging.getLogger(__name__)


class Retriever(Protocol):
    id: str

    def search(self, query_text: str, limit: int) -> RankedList: ...


def cache_key(retriever_id: str, query_text: str, limit: int) -> str:
    blob = json.dumps([retriever_id, query_text, limit], ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True, slots=True)
class CacheEntry:
    key: str
    payload: RankedList
    created_at: float

    def to_dict(self) -> dict[str, Any]:
        return {"key": self.key, "payload": self.payload.to_dict(), "created_at": self.created_at}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> CacheEntry:
        return cls(data["key"], RankedList.from_dict(data["payload"]), float(data["created_at"]))


class SearchCache:
    """Layout: ``<directory>/<first two hex chars>/<key>.json``.

    Writes go to a temp file and are renamed into place, so concurrent writers
    of one key never leave a torn file behind.
    """

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        self.errors = 0

    def path_for(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.json"

    def get(self, key: str) -> RankedList | None:
        path = self.path_for(key)
        try:
            with open(path, encoding="utf-8") as fh:
                entry = CacheEntry.from_dict(json.load(fh))
            if entry.key != key:
                raise ValueError("key mismatch")
        except FileNotFoundError:
            return None
        except (OSError, ValueError, KeyError, TypeError) as exc:
            log.warning("ignoring unreadable cache entry %s: %s", path, exc)
            with self._lock:
                self.errors += 1
            return None
        return entry.payload

    def put(self, key: str, ranked: RankedList) -> None:
        path = self.path_for(key)
        entry = CacheEntry(key, ranked, time.time())
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    json.dump(entry.to_dict(), fh, ensure_ascii=False, sort_keys=True)
                os.replace(tmp, path)
            except BaseException:
                Path(tmp).unlink(missing_ok=True)
                raise
        except OSError as exc:
            log.warning("cache write failed for %s: %s", path, exc)
            with self._lock:
                self.errors += 1

    def record(self, hit: bool) -> None:
        with self._lock:
            if hit:
                self.hits += 1
            else:
                self.misses += 1

    def stats(self) -> dict[str, int]:
        entries = 0
        size = 0
        if self.directory.is_dir():
            for path in self.directory.glob("*/*.json"):
                entries += 1
                size += path.stat().st_size
        return {"entries": entries, "bytes": size, "hits": self.hits, "misses": self.misses}

    def clear(self) -> int:
        removed = 0
        if self.directory.is_dir():
            for sub in self.directory.iterdir():
                if sub.is_dir() and len(sub.name) == 2:
                    removed += sum(1 for _ in sub.glob("*.json"))
                    shutil.rmtree(sub)
        return removed


def cached_search_with_status(
    cache: SearchCache | None, retriever: Retriever, query_text: str, limit: int
) -> tuple[RankedList, bool]:
    """Search through the cache. Returns ``(result, hit)``."""
    if cache is None:
        return retriever.search(query_text, limit), False
    key = cache_key(retriever.id, query_text, limit)
    cached = cache.get(key)
    if cached is not None:
        cache.record(True)
        return cached, True
    cache.record(False)
    result = retriever.search(query_text, limit)
    cache.put(key, result)
    return result, False


def cached_search(
    cache: SearchCache | None, retriever: Retriever, query_text: str, limit: int
) -> RankedList:
    return cached_search_with_status(cache, retriever, query_text, limit)[0]
