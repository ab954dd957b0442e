from __future__ import annotations

import json
import os

import pytest

from dmqr import cli
from dmqr.selection import load_demonstrations

from helpers import rewrite_fixtures, selection_fixture

WORDS = ("alpha", "bravo", "charlie", "delta", "echo")
Q = "alpha"


@pytest.fixture
def workspace(tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    corpus.write_text("\n".join(
        json.dumps({"id": f"{w}-{j}", "title": f"{w} {j}", "text": f"{w} record{j}"})
        for w in WORDS for j in range(12)
    ))
    fixtures = {
        **rewrite_fixtures(Q, {"GQR": "bravo", "KWR": "KEYWORDS: charlie", "PAR": "delta", "CCE": "echo"}),
        **selection_fixture(Q, "GQR", load_demonstrations()),
        "Answer the question": "alpha",
    }
    mock = tmp_path / "mock.json"
    mock.write_text(json.dumps(fixtures))
    index = tmp_path / "index.json"
    assert cli.main(["index", str(corpus), str(index)], env={}) == 0
    flags = ["--mock", str(mock), "--index", str(index), "--cache-dir", str(tmp_path / "cache")]
    return tmp_path, flags


def run_cli(capsys, *argv, env=None):
    code = cli.main(list(argv), env=env or {})
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_index_ok_and_errors(tmp_path, capsys):
    good = tmp_path / "c.jsonl"
    good.write_text("\n".join(json.dumps({"id": str(i), "text": f"doc {i}"}) for i in range(3)))
    code, out, _ = run_cli(capsys, "index", str(good), str(tmp_path / "i.json"))
    assert code == 0 and "N=3" in out
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "1", "text": "x"}\n{"id": 2,\n')
    code, _, err = run_cli(capsys, "index", str(bad), str(tmp_path / "i2.json"))
    assert code == 1 and ":2:" in err
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    code, _, err = run_cli(capsys, "index", str(empty), str(tmp_path / "i3.json"))
    assert code == 1 and "empty" in err
    dup = tmp_path / "dup.jsonl"
    dup.write_text('{"id": "1", "text": "x"}\n{"id": "1", "text": "y"}\n')
    assert run_cli(capsys, "index", str(dup), str(tmp_path / "i4.json"))[0] == 1


def test_rewrite_strategies(workspace, capsys):
    _, flags = workspace
    code, out, _ = run_cli(capsys, "rewrite", Q, "--strategies", "gqr,par", *flags)
    assert code == 0
    assert out.splitlines() == ["[GQR] bravo", "[PAR] delta"]


def test_rewrite_adaptive_json(workspace, capsys):
    _, flags = workspace
    code, out, _ = run_cli(capsys, "rewrite", Q, "--adaptive", "--json", *flags)
    data = json.loads(out)
    assert code == 0
    assert data["selection"]["chosen"] == ["GQR"]
    assert [r["strategy"] for r in data["rewrites"]] == ["GQR"]


def test_rewrite_unknown_strategy(workspace, capsys):
    _, flags = workspace
    code, _, err = run_cli(capsys, "rewrite", Q, "--strategies", "gqr,bogus", *flags)
    assert code == 2
    assert "GQR, KWR, PAR, CCE" in err


def test_rewrite_completer_failure_exits_2(tmp_path, capsys):
    mock = tmp_path / "empty.json"
    mock.write_text("{}")
    assert run_cli(capsys, "rewrite", Q, "--mock", str(mock))[0] == 2
    env = {"DMQR_LLM_URL": "http://127.0.0.1:9/v1/chat/completions"}
    assert run_cli(capsys, "rewrite", Q, "--strategies", "gqr", env=env)[0] == 2


def test_ask_prints_answer_and_writes_trace(workspace, capsys):
    tmp_path, flags = workspace
    trace_path = tmp_path / "trace.json"
    code, out, _ = run_cli(capsys, "ask", Q, *flags, "--trace-out", str(trace_path))
    assert code == 0
    assert out.splitlines()[0] == "alpha"
    cited = out.splitlines()[2:]
    assert len(cited) == 5 and cited[0].startswith("[1] ")
    trace = json.loads(trace_path.read_text())
    assert trace["retrieval_calls"] == 5
    code, out, _ = run_cli(capsys, "ask", Q, *flags, "--method", "oqr", "--json")
    assert json.loads(out)["retrieval_calls"] == 1


def test_ask_missing_index(tmp_path, capsys):
    mock = tmp_path / "m.json"
    mock.write_text("{}")
    code, _, err = run_cli(capsys, "ask", Q, "--mock", str(mock), "--index", str(tmp_path / "none.json"))
    assert code == 2 and "IndexMissing" in err


def test_ask_degraded_run_exits_zero(workspace, capsys):
    tmp_path, flags = workspace
    fixtures = json.loads((tmp_path / "mock.json").read_text())
    fixtures.update(rewrite_fixtures(Q, {"KWR": "KEYWORDS:"}))
    (tmp_path / "mock.json").write_text(json.dumps(fixtures))
    code, _, err = run_cli(capsys, "ask", Q, *flags)
    assert code == 0 and "warning: rewrite_fallback" in err


def _dataset(tmp_path):
    path = tmp_path / "data.jsonl"
    path.write_text("\n".join([
        json.dumps({"id": "1", "question": Q, "gold_answers": ["alpha"], "gold_doc_ids": ["alpha-0"]}),
        json.dumps({"id": "2", "question": "bravo", "gold_answers": ["bravo"], "gold_doc_ids": ["bravo-3"]}),
    ]))
    return path


def test_eval_single_method(workspace, capsys):
    tmp_path, flags = workspace
    out_path = tmp_path / "report.json"
    code, out, _ = run_cli(capsys, "eval", str(_dataset(tmp_path)), *flags, "--method", "oqr", "--out", str(out_path))
    assert code == 0
    report = json.loads(out_path.read_text())
    assert report["method"] == "OQR" and len(report["rows"]) == 2
    assert set(report["aggregates"]) >= {"h_at_k", "p_at_k", "em", "f1", "mean_rewrites"}
    assert out.splitlines()[1].startswith("OQR")


def test_eval_all_methods(workspace, capsys):
    tmp_path, flags = workspace
    code, out, _ = run_cli(capsys, "eval", str(_dataset(tmp_path)), *flags, "--method", "all", "--json")
    assert code == 0
    assert [row["method"] for row in json.loads(out)] == [
        "OQR", "REWRITE", "HYDE", "RAG_FUSION", "DMQR", "DMQR_ADAPTIVE"]


def test_eval_data_errors(workspace, capsys):
    tmp_path, flags = workspace
    assert run_cli(capsys, "eval", str(tmp_path / "missing.jsonl"), *flags)[0] == 1
    if os.geteuid() == 0:
        target = "/proc/dmqr-report.json"
    else:
        locked = tmp_path / "locked"
        locked.mkdir()
        locked.chmod(0o500)
        target = str(locked / "report.json")
    code, _, err = run_cli(capsys, "eval", str(_dataset(tmp_path)), *flags, "--method", "oqr", "--out", target)
    assert code == 1 and "cannot write report" in err


def test_cache_commands(workspace, capsys):
    _, flags = workspace
    run_cli(capsys, "ask", Q, *flags)
    code, out, _ = run_cli(capsys, "cache", "stats", "--json", *flags)
    assert code == 0 and json.loads(out)["entries"] == 5
    code, out, _ = run_cli(capsys, "cache", "clear", *flags)
    assert out.strip() == "removed 5 entries"


def test_config_precedence_and_redaction(tmp_path, capsys):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"llm_model": "from-file", "per_query_limit": 7, "llm_key": "file-secret"}))
    env = {"DMQR_LLM_MODEL": "from-env", "DMQR_SEARCH_KEY": "env-secret"}
    code, out, _ = run_cli(capsys, "--config", str(config), "--show-config", "-M", "3", env=env)
    shown = json.loads(out)
    assert code == 0
    assert shown["llm_model"] == "from-env"
    assert shown["per_query_limit"] == 3
    assert shown["llm_key"] == "***" and shown["search_key"] == "***"
    assert "secret" not in out


def test_bad_config_exits_2(tmp_path, capsys):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"nonsense": 1}))
    assert run_cli(capsys, "--config", str(config), "cache", "stats")[0] == 2
    assert run_cli(capsys, "--config", str(tmp_path / "absent.json"), "cache", "stats")[0] == 2


def test_flags_before_subcommand_survive(workspace, capsys):
    _, flags = workspace
    code, out, _ = run_cli(capsys, "--json", "ask", Q, *flags)
    assert code == 0 and json.loads(out)["retrieval_calls"] == 5
