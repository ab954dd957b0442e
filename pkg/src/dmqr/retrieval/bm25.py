"""Okapi BM25 inverted index used as the offline black-box retriever."""

from __future__ import annotations

import bisect
import hashlib
import json
import math
import os
import tempfile
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

from ..errors import DuplicateDocId, EmptyCorpus, IndexMissing
from ..model import Document, RankedList, tokenize

FORMAT = "dmqr-bm25"
VERSION = 1


@dataclass(frozen=True, slots=True)
class CorpusDoc:
    id: str
    title: str
    text: str
    url: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("corpus document needs an id")
        if not self.text or not self.text.strip():
            raise ValueError(f"corpus document {self.id} has empty text")

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "title": self.title, "text": self.text, "url": self.url}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> CorpusDoc:
        return cls(str(data["id"]), str(data.get("title", "")), data["text"], data.get("url") or None)


def load_corpus(path: str | Path) -> list[CorpusDoc]:
    """Read a JSON Lines corpus. Errors name the offending line number."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                docs.append(CorpusDoc.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: invalid corpus record: {exc}") from exc
    return docs


class Bm25Index:
    """Immutable inverted index.

    ``postings`` maps a term to ``(doc position, term frequency)`` pairs sorted
    by doc position. Positions index into ``docs`` / ``doc_lengths``.
    """

    def __init__(
        self,
        docs: Sequence[CorpusDoc],
        postings: dict[str, list[tuple[int, int]]],
        doc_lengths: Sequence[int],
        k1: float = 1.2,
        b: float = 0.75,
    ) -> None:
        if not docs:
            raise EmptyCorpus("index needs at least one document")
        self.docs = tuple(docs)
        self.postings = postings
        self.doc_lengths = tuple(doc_lengths)
        self.n_docs = len(docs)
        self.avg_length = sum(self.doc_lengths) / self.n_docs
        if self.avg_length <= 0:
            raise EmptyCorpus("corpus has no tokens")
        self.k1 = k1
        self.b = b
        self._position = {d.id: i for i, d in enumerate(self.docs)}

    @property
    def vocabulary_size(self) -> int:
        return len(self.postings)

    def position(self, doc_id: str) -> int:
        return self._position[doc_id]

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1 + (self.n_docs - df + 0.5) / (df + 0.5))

    def term_frequency(self, term: str, position: int) -> int:
        plist = self.postings.get(term)
        if not plist:
            return 0
        i = bisect.bisect_left(plist, (position, 0))
        if i < len(plist) and plist[i][0] == position:
            return plist[i][1]
        return 0

    def _term_weight(self, idf: float, tf: int, length: int) -> float:
        norm = self.k1 * (1 - self.b + self.b * length / self.avg_length)
        return idf * tf * (self.k1 + 1) / (tf + norm)

    def scores(self, query_terms: Sequence[str]) -> dict[int, float]:
        """Scores of every document sharing at least one term with the query."""
        acc: dict[int, float] = {}
        for term in query_terms:
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for pos, tf in plist:
                acc[pos] = acc.get(pos, 0.0) + self._term_weight(idf, tf, self.doc_lengths[pos])
        return acc

    def rank(self, query_text: str, limit: int) -> list[tuple[str, float]]:
        """``(doc id, score)`` pairs, score descending then id ascending."""
        if limit < 1:
            raise ValueError("limit must be >= 1")
        scored = self.scores(tokenize(query_text))
        ordered = sorted(scored.items(), key=lambda kv: (-kv[1], self.docs[kv[0]].id))
        return [(self.docs[pos].id, score) for pos, score in ordered[:limit]]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([self.k1, self.b], sort_keys=True).encode())
        for d in self.docs:
            h.update(json.dumps(d.to_dict(), sort_keys=True, ensure_ascii=False).encode("utf-8"))
        return h.hexdigest()

    # persistence

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": FORMAT,
            "version": VERSION,
            "k1": self.k1,
            "b": self.b,
            "docs": [d.to_dict() for d in self.docs],
            "doc_lengths": list(self.doc_lengths),
            "postings": {t: [list(p) for p in plist] for t, plist in sorted(self.postings.items())},
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Bm25Index:
        if data.get("format") != FORMAT or data.get("version") != VERSION:
            raise ValueError(f"unsupported index format {data.get('format')}/{data.get('version')}")
        return cls(
            [CorpusDoc.from_dict(d) for d in data["docs"]],
            {t: [(int(p), int(tf)) for p, tf in plist] for t, plist in data["postings"].items()},
            data["doc_lengths"],
            float(data["k1"]),
            float(data["b"]),
        )

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".index-", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | Path) -> Bm25Index:
        path = Path(path)
        if not path.is_file():
            raise IndexMissing(f"no index at {path}")
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def build_index(corpus: Iterable[CorpusDoc], *, k1: float = 1.2, b: float = 0.75) -> Bm25Index:
    docs: list[CorpusDoc] = []
    seen: set[str] = set()
    postings: dict[str, list[tuple[int, int]]] = {}
    lengths: list[int] = []
    for doc in corpus:
        if doc.id in seen:
            raise DuplicateDocId(f"duplicate document id {doc.id!r}")
        seen.add(doc.id)
        tokens = tokenize(f"{doc.title} {doc.text}")
        for term, tf in Counter(tokens).items():
            postings.setdefault(term, []).append((len(docs), tf))
        lengths.append(len(tokens))
        docs.append(doc)
    if not docs:
        raise EmptyCorpus("corpus is empty")
    return Bm25Index(docs, postings, lengths, k1, b)


def bm25_score(index: Bm25Index, query_terms: Sequence[str], doc_id: str) -> float:
    """BM25 of one document; unknown terms contribute nothing."""
    pos = index.position(doc_id)
    length = index.doc_lengths[pos]
    total = 0.0
    for term in query_terms:
        tf = index.term_frequency(term, pos)
        if tf:
            total += index._term_weight(index.idf(term), tf, length)
    return total


class LocalRetriever:
    """Retriever over an in-memory :class:`Bm25Index`."""

    def __init__(self, index: Bm25Index) -> None:
        self.index = index
        self.id = f"local:{index.fingerprint()}"

    @classmethod
    def from_path(cls, path: str | Path) -> LocalRetriever:
        return cls(Bm25Index.load(path))

    def search(self, query_text: str, limit: int) -> RankedList:
        ranked = self.index.rank(query_text, limit)
        docs = []
        for doc_id, _ in ranked:
            src = self.index.docs[self.index.position(doc_id)]
            docs.append(Document.create(src.title, src.text, src.url, source_id=src.id))
        return RankedList.from_documents(query_text, docs)
