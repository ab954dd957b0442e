"""Datasets, relevance judges and the experiment runner."""

from __future__ import annotations

import json
import logging
import os
import re
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

from ..llm import ChatRequest, Completer, PromptTemplate, load_template, render
from ..model import Document, PipelineConfig, Query
from ..pipeline import Deps, PipelineTrace, method_config, run
from .metrics import exact_match, f1_token, hit_at_k, precision_at_k

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class EvalItem:
    id: str
    question: str
    gold_answers: tuple[str, ...] = ()
    gold_doc_ids: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.gold_answers and not self.gold_doc_ids:
            raise ValueError(f"item {self.id} has neither gold answers nor gold documents")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "question": self.question,
            "gold_answers": list(self.gold_answers),
            "gold_doc_ids": list(self.gold_doc_ids) if self.gold_doc_ids is not None else None,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EvalItem:
        docs = data.get("gold_doc_ids")
        return cls(
            str(data["id"]),
            data["question"],
            tuple(str(a) for a in data.get("gold_answers") or ()),
            tuple(str(d) for d in docs) if docs is not None else None,
        )


def _dedup(values: Iterable[str]) -> tuple[str, ...]:
    return tuple(dict.fromkeys(v for v in values if v))


def from_ambignq(record: Mapping[str, Any]) -> EvalItem:
    """AmbigNQ: answers live under ``annotations`` (single answers or QA pairs)."""
    answers: list[str] = []
    for ann in record.get("annotations", []):
        if ann.get("type") == "singleAnswer":
            answers.extend(ann.get("answer", []))
        elif ann.get("type") == "multipleQAs":
            for pair in ann.get("qaPairs", []):
                answers.extend(pair.get("answer", []))
    return EvalItem(str(record["id"]), record["question"], _dedup(answers))


def from_hotpotqa(record: Mapping[str, Any]) -> EvalItem:
    return EvalItem(str(record["_id"]), record["question"], _dedup([record["answer"]]))


def adapt_record(record: Mapping[str, Any]) -> EvalItem:
    if "gold_answers" in record or "gold_doc_ids" in record:
        return EvalItem.from_dict(record)
    if "annotations" in record:
        return from_ambignq(record)
    if "_id" in record and "answer" in record:
        return from_hotpotqa(record)
    if "answers" in record:
        return EvalItem(str(record["id"]), record["question"], _dedup(record["answers"]))
    raise DatasetError("record matches no known dataset schema")


def load_dataset(path: str | Path) -> list[EvalItem]:
    """JSON Lines (one item per line) or a single JSON array."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    items: list[EvalItem] = []
    if stripped.startswith("["):
        try:
            records = json.loads(text)
        except ValueError as exc:
            raise DatasetError(f"{path}: invalid JSON: {exc}") from exc
        for i, record in enumerate(records):
            try:
                items.append(adapt_record(record))
            except (KeyError, ValueError, TypeError) as exc:
                raise DatasetError(f"{path}: record {i}: {exc}") from exc
        return items
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            items.append(adapt_record(json.loads(line)))
        except (KeyError, ValueError, TypeError) as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    return items


# Judging -------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Judgment:
    doc_key: str
    relevant: bool
    judge: str
    unparseable: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "doc_key": self.doc_key,
            "relevant": self.relevant,
            "judge": self.judge,
            "unparseable": self.unparseable,
        }


class Judge(Protocol):
    def judge(self, item: EvalItem, doc: Document) -> Judgment: ...


class GoldLabelJudge:
    """Relevant iff the document's corpus id is one of the item's gold ids."""

    name = "gold_labels"

    def __init__(self, key_to_id: Mapping[str, str] | None = None) -> None:
        self._key_to_id = dict(key_to_id or {})

    def judge(self, item: EvalItem, doc: Document) -> Judgment:
        doc_id = doc.source_id or self._key_to_id.get(doc.key)
        relevant = bool(item.gold_doc_ids) and doc_id in item.gold_doc_ids
        return Judgment(doc.key, relevant, self.name)


_YES_NO = re.compile(r"^\W*(yes|no)\b", re.IGNORECASE)


def parse_yes_no(text: str) -> bool | None:
    match = _YES_NO.match(text)
    if not match:
        return None
    return match.group(1).lower() == "yes"


class LlmJudge:
    name = "llm_judge"

    def __init__(self, completer: Completer, template: PromptTemplate | None = None) -> None:
        self.completer = completer
        self.template = template or load_template("judge_relevance")

    def judge(self, item: EvalItem, doc: Document) -> Judgment:
        prompt = render(
            self.template, {"query": item.question, "title": doc.title, "content": doc.content}
        )
        verdict = parse_yes_no(self.completer.complete(ChatRequest(prompt)).text)
        if verdict is None:
            return Judgment(doc.key, False, self.name, unparseable=True)
        return Judgment(doc.key, verdict, self.name)


def judge_relevance(item: EvalItem, doc: Document, judge: Judge) -> Judgment:
    return judge.judge(item, doc)


class LlmAnswerGrader:
    """Yes/no correctness grading of a free-form answer (accuracy metric)."""

    def __init__(self, completer: Completer, template: PromptTemplate | None = None) -> None:
        self.completer = completer
        self.template = template or load_template("judge_answer")

    def grade(self, item: EvalItem, prediction: str) -> int | None:
        prompt = render(
            self.template,
            {
                "query": item.question,
                "golds": "; ".join(item.gold_answers) or "(none)",
                "prediction": prediction,
            },
        )
        verdict = parse_yes_no(self.completer.complete(ChatRequest(prompt)).text)
        return None if verdict is None else int(verdict)


# Reports -------------------------------------------------------------------

METRIC_FIELDS = ("h_at_k", "p_at_k", "em", "f1", "acc")


def _mean(values: Sequence[float]) -> float | None:
    return sum(values) / len(values) if values else None


@dataclass
class MetricsReport:
    method: str
    k: int
    config: dict[str, Any]
    rows: list[dict[str, Any]]
    aggregates: dict[str, Any]
    histogram: dict[str, int]

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "k": self.k,
            "config": self.config,
            "rows": self.rows,
            "aggregates": self.aggregates,
            "histogram": self.histogram,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=2)

    def write(self, path: str | Path) -> None:
        path = Path(path)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".report-", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(self.to_json() + "\n")
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise


def aggregate(rows: Sequence[Mapping[str, Any]]) -> tuple[dict[str, Any], dict[str, int]]:
    """Means of every metric over rows that carry it, plus the rewrite-count histogram."""
    ok = [r for r in rows if not r.get("error")]
    aggregates: dict[str, Any] = {
        name: _mean([r[name] for r in ok if r.get(name) is not None]) for name in METRIC_FIELDS
    }
    counts = [r["n_rewrites"] for r in ok]
    aggregates["mean_rewrites"] = _mean(counts)
    aggregates["items"] = len(rows)
    aggregates["errors"] = len(rows) - len(ok)
    histogram: dict[str, int] = {}
    for n in sorted(counts):
        histogram[str(n)] = histogram.get(str(n), 0) + 1
    return aggregates, histogram


def score_item(
    item: EvalItem,
    trace: PipelineTrace,
    judge: Judge,
    k: int,
    grader: LlmAnswerGrader | None = None,
) -> dict[str, Any]:
    judgments = [judge.judge(item, f.doc) for f in trace.context[:k]]
    marks = [j.relevant for j in judgments]
    answer = trace.answer.text
    row: dict[str, Any] = {
        "id": item.id,
        "question": item.question,
        "h_at_k": hit_at_k(marks),
        "p_at_k": precision_at_k(marks, k),
        "em": exact_match(answer, item.gold_answers) if item.gold_answers else None,
        "f1": f1_token(answer, item.gold_answers) if item.gold_answers else None,
        "acc": grader.grade(item, answer) if grader else None,
        "n_rewrites": len(trace.query_set.rewrites),
        "chosen": trace.query_set.strategies,
        "answer": answer,
        "judgments": [j.to_dict() for j in judgments],
        "retrieval_calls": trace.retrieval_calls,
        "flags": [f["flag"] for f in trace.flags],
        "error": None,
    }
    return row


def run_experiment(
    dataset: Sequence[EvalItem],
    config: PipelineConfig,
    method: str,
    deps: Deps,
    judge: Judge,
    *,
    grader: LlmAnswerGrader | None = None,
    max_workers: int = 4,
    out_path: str | Path | None = None,
    trace_sink: dict[str, PipelineTrace] | None = None,
) -> MetricsReport:
    """Run ``method`` over every item, judge the top-K context and aggregate."""
    cfg = method_config(method, config)
    k = cfg.context_size

    def one(item: EvalItem) -> dict[str, Any]:
        try:
            trace = run(Query(item.question, item.id), cfg, deps)
            if trace_sink is not None:
                trace_sink[item.id] = trace
            return score_item(item, trace, judge, k, grader)
        except Exception as exc:  # recorded per row; the run continues
            log.warning("item %s failed: %s", item.id, exc)
            return {
                "id": item.id,
                "question": item.question,
                **{name: None for name in METRIC_FIELDS},
                "n_rewrites": None,
                "error": f"{type(exc).__name__}: {exc}",
            }

    if max_workers <= 1:
        rows = [one(item) for item in dataset]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            rows = list(executor.map(one, dataset))
    rows.sort(key=lambda r: r["id"])
    aggregates, histogram = aggregate(rows)
    report = MetricsReport(method.upper(), k, cfg.to_dict(), rows, aggregates, histogram)
    if out_path is not None:
        report.write(out_path)
    return report


__all__ = [
    "DatasetError",
    "EvalItem",
    "GoldLabelJudge",
    "Judgment",
    "LlmAnswerGrader",
    "LlmJudge",
    "MetricsReport",
    "aggregate",
    "judge_relevance",
    "load_dataset",
    "run_experiment",
]
