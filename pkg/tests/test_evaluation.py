from __future__ import annotations

import json

import pytest
from hypothesis import given, strategies as st

from dmqr.evaluation import (
    DatasetError,
    EvalItem,
    GoldLabelJudge,
    LlmAnswerGrader,
    LlmJudge,
    exact_match,
    f1_token,
    hit_at_k,
    load_dataset,
    normalize_answer,
    precision_at_k,
    run_experiment,
)
from dmqr.model import Document, PipelineConfig
from dmqr.pipeline import Deps

from helpers import retriever, scripted


def test_normalize_examples():
    assert normalize_answer("The Eiffel Tower!") == "eiffel tower"
    assert normalize_answer("a an the") == ""
    assert normalize_answer("X") == "x"


def test_exact_match_examples():
    assert exact_match("The Eiffel Tower", ["Eiffel Tower"]) == 1
    assert exact_match("Paris, France", ["Paris"]) == 0
    assert exact_match("g", ["g"]) == 1


def test_f1_examples():
    assert f1_token("Paris France", ["Paris"]) == pytest.approx(0.6667, abs=1e-4)
    assert f1_token("same answer", ["same answer"]) == 1.0
    assert f1_token("foo", ["bar"]) == 0.0
    assert f1_token("", [""]) == 1.0


def test_hit_and_precision_examples():
    assert hit_at_k([True, False, False, False, False]) == 1
    assert hit_at_k([False] * 5) == 0
    assert hit_at_k([False, True]) == 1
    assert precision_at_k([True, True, False, True, False], 5) == 0.6
    assert precision_at_k([True, True, True], 5) == 0.6
    assert precision_at_k([True] * 5, 5) == 1.0


@given(st.lists(st.booleans(), max_size=5))
def test_hit_iff_precision_positive(marks):
    assert (hit_at_k(marks) == 1) == (precision_at_k(marks, 5) > 0)


@given(st.text(), st.lists(st.text(), min_size=1, max_size=3))
def test_em_implies_f1(pred, golds):
    em, f1 = exact_match(pred, golds), f1_token(pred, golds)
    assert 0 <= f1 <= 1
    if em:
        assert f1 == 1.0


def _doc(source_id):
    return Document.create("t", f"content {source_id}", source_id=source_id)


def test_judges():
    item = EvalItem("1", "q", ("a",), ("d1",))
    assert GoldLabelJudge().judge(item, _doc("d1")).relevant
    assert not GoldLabelJudge().judge(item, _doc("d2")).relevant
    yes = LlmJudge(scripted(default="Yes, because it names the tower.")).judge(item, _doc("d2"))
    assert yes.relevant and not yes.unparseable
    maybe = LlmJudge(scripted(default="maybe")).judge(item, _doc("d2"))
    assert not maybe.relevant and maybe.unparseable
    assert LlmAnswerGrader(scripted(default="No.")).grade(item, "x") == 0


def test_dataset_adapters(tmp_path):
    path = tmp_path / "mixed.jsonl"
    rows = [
        {"id": "a", "question": "q1", "gold_answers": ["x"]},
        {"id": "b", "question": "q2", "annotations": [
            {"type": "multipleQAs", "qaPairs": [{"answer": ["y1", "y2"]}, {"answer": ["y1"]}]}]},
        {"_id": "c", "question": "q3", "answer": "z"},
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows))
    items = load_dataset(path)
    assert [i.gold_answers for i in items] == [("x",), ("y1", "y2"), ("z",)]
    array = tmp_path / "array.json"
    array.write_text(json.dumps(rows[:1]))
    assert load_dataset(array)[0].id == "a"
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps(rows[0]) + "\n{oops\n")
    with pytest.raises(DatasetError, match=":2:"):
        load_dataset(bad)


def _experiment(tmp_path, name):
    docs = [("d1", "", "paris is the capital of france"), ("d2", "", "rome is in italy")]
    items = [EvalItem("2", "capital of italy", ("Rome",), ("d2",)), EvalItem("1", "capital of france", ("Paris",), ("d1",))]
    deps = Deps(completer=scripted({"capital of france": "Paris", "capital of italy": "Milan"}), retriever=retriever(docs))
    return run_experiment(items, PipelineConfig(), "OQR", deps, GoldLabelJudge(), out_path=tmp_path / name)


def test_report_is_deterministic_and_consistent(tmp_path):
    report = _experiment(tmp_path, "a.json")
    _experiment(tmp_path, "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    data = json.loads((tmp_path / "a.json").read_text())
    assert [r["id"] for r in data["rows"]] == ["1", "2"]
    # independent pass over the file: aggregates equal recomputed row means
    for name in ("h_at_k", "p_at_k", "em", "f1"):
        values = [r[name] for r in data["rows"]]
        assert all(0 <= v <= 1 for v in values)
        assert data["aggregates"][name] == pytest.approx(sum(values) / len(values))
    assert data["aggregates"]["em"] == 0.5
    assert report.histogram == {"0": 2}


def test_item_errors_become_rows():
    class Broken:
        id = "broken"

        def search(self, q, limit):
            raise RuntimeError("never called")

    class NoAnswer:
        def complete(self, request):
            from dmqr.errors import TransportError
            raise TransportError("down")

    items = [EvalItem("1", "q", ("a",))]
    report = run_experiment(items, PipelineConfig(), "OQR", Deps(NoAnswer(), Broken()), GoldLabelJudge())
    assert report.aggregates["errors"] == 1
    assert report.rows[0]["error"].startswith("PipelineError")
    assert report.aggregates["h_at_k"] is None
