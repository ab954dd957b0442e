from __future__ import annotations

import io
import json

from hypothesis import given, strategies as st

from dmqr.model import GQR, KWR, Document, Query, RankedList, RewrittenQuery, build_query_set
from dmqr.tracing import Tracer, diversity_stats, jaccard


def _ranked(names):
    return RankedList.from_documents("q", [Document.create(n, n, f"https://ex.org/{n}") for n in names])


def test_jaccard_examples():
    assert jaccard("who is the CEO", "Who is the ceo") == 1.0
    assert jaccard("alpha beta", "gamma delta") == 0.0


@given(st.text(), st.text())
def test_jaccard_bounds_and_symmetry(a, b):
    assert 0.0 <= jaccard(a, b) <= 1.0
    assert jaccard(a, b) == jaccard(b, a)
    assert jaccard(a, a) == 1.0


def test_contained_list_has_no_unique_docs():
    q = Query("q")
    qs = build_query_set(q, [RewrittenQuery(GQR, "r1", q), RewrittenQuery(KWR, "r1", q)])
    stats = diversity_stats(qs, [("ORIGINAL", _ranked(["a", "b"])), (GQR, _ranked(["b", "c", "d"])), (KWR, _ranked(["a", "c"]))])
    assert stats.unique_docs == {"ORIGINAL": 0, GQR: 1, KWR: 0}
    assert stats.jaccard[1][2] == 1.0
    assert all(stats.jaccard[i][i] == 1.0 for i in range(3))


lists = st.lists(st.lists(st.sampled_from("abcdefg"), unique=True, max_size=5), min_size=2, max_size=4)


@given(lists)
def test_unique_counts_bounded_and_monotone(names):
    labels = ["ORIGINAL", GQR, KWR, "PAR"][: len(names)]
    q = Query("q")
    qs = build_query_set(q, [RewrittenQuery(s, f"text {s}", q) for s in labels[1:]])
    per = [(label, _ranked(n)) for label, n in zip(labels, names)]
    stats = diversity_stats(qs, per)
    survivors = len({d.key for _, r in per for d in r.docs})
    assert sum(stats.unique_docs.values()) <= survivors
    for removed in range(len(per)):
        reduced = diversity_stats(qs, per[:removed] + per[removed + 1:])
        for label, count in reduced.unique_docs.items():
            assert count >= stats.unique_docs[label]


def test_tracer_events_stream_and_timings():
    stream = io.StringIO()
    tracer = Tracer(stream=stream)
    with tracer.stage("retrieval"):
        tracer.flag("retrieval_error", strategy=GQR)
    assert tracer.flags == [{"flag": "retrieval_error", "strategy": GQR}]
    timing = tracer.timings[0]
    assert timing.stage == "retrieval" and timing.end >= timing.start and timing.wall_ms >= 0
    lines = [json.loads(line) for line in stream.getvalue().splitlines()]
    assert {"event": "flag", "name": "retrieval_error", "strategy": GQR} in lines
    assert any(line["event"] == "timing" and line["stage"] == "retrieval" for line in lines)
