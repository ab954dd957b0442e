from __future__ import annotations

import json

import httpx
import pytest
from hypothesis import given, strategies as st

from dmqr.errors import AuthError, BadRequest, EmptyCompletion, MissingPlaceholder, RateLimited, TransportError
from dmqr.http import TokenBucket
from dmqr.llm import ChatRequest, HttpCompleter, PromptTemplate, ScriptedCompleter, load_template, prompt_hash, render


def test_scripted_hash_fixture():
    req = ChatRequest("What is the capital of France?")
    mock = ScriptedCompleter({prompt_hash(req.prompt): "Paris"})
    assert mock.complete(req).text == "Paris"
    assert mock.complete(req) == mock.complete(req)
    assert len(mock.calls) == 3


def test_scripted_substring_longest_wins():
    mock = ScriptedCompleter({"capital": "generic", "capital of France": "Paris"})
    assert mock.complete(ChatRequest("the capital of France?")).text == "Paris"
    assert mock.complete(ChatRequest("capital of Peru?")).text == "generic"


def test_scripted_without_match_raises():
    with pytest.raises(EmptyCompletion):
        ScriptedCompleter({}).complete(ChatRequest("x"))
    assert ScriptedCompleter({}, default="d").complete(ChatRequest("x")).text == "d"


def test_prompt_includes_system():
    assert ChatRequest("u", system="s").prompt == "s\n\nu"


def test_render_examples():
    assert render(PromptTemplate("t", "Rewrite: {query}"), {"query": "abc"}) == "Rewrite: abc"
    assert render(PromptTemplate("t", "{a}{a}"), {"a": "x"}) == "xx"
    with pytest.raises(MissingPlaceholder) as err:
        render(PromptTemplate("t", "{query} {missing}"), {"query": "q"})
    assert err.value.name == "missing"


def test_render_does_not_expand_values():
    assert render(PromptTemplate("t", "{a} {b}"), {"a": "{b}", "b": "x"}) == "{b} x"


@given(st.text(alphabet="xyz -", min_size=1), st.integers(1, 4))
def test_render_counts_bindings(value, repeats):
    template = PromptTemplate("t", " ".join(["{v}"] * repeats))
    out = render(template, {"v": f"<{value}>"})
    assert out.count(f"<{value}>") == repeats


def test_bundled_templates_have_expected_placeholders():
    assert set(load_template("answer").placeholders) == {"query", "context"}
    assert set(load_template("selection").placeholders) == {"strategy_descriptions", "demonstrations", "query"}
    for name in ("gqr", "kwr", "par", "cce", "hyde", "baseline_rewrite"):
        assert set(load_template(name).placeholders) == {"query"}


def _completer(handler, **kwargs):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return HttpCompleter("https://llm.test/v1/chat/completions", api_key="k", client=client,
                         sleep=lambda s: None, **kwargs)


def _ok(text="hi"):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}}],
                                     "usage": {"prompt_tokens": 3, "completion_tokens": 1}})


def test_http_401_no_retry():
    calls = []

    def handler(request):
        calls.append(request)
        return httpx.Response(401, json={"error": "bad key"})

    with pytest.raises(AuthError):
        _completer(handler).complete(ChatRequest("x"))
    assert len(calls) == 1


def test_http_503_then_200_retries_once():
    responses = iter([httpx.Response(503), _ok("Paris")])
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        return next(responses)

    resp = _completer(handler).complete(ChatRequest("q", system="s", temperature=0.0))
    assert resp.text == "Paris"
    assert resp.retries == 1
    assert seen[0]["messages"] == [{"role": "system", "content": "s"}, {"role": "user", "content": "q"}]
    assert seen[0]["temperature"] == 0.0


def test_http_429_exhausts_to_rate_limited():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(429, headers={"retry-after": "2"})

    with pytest.raises(RateLimited) as err:
        _completer(handler, max_retries=2).complete(ChatRequest("x"))
    assert err.value.retry_after == 2.0
    assert len(calls) == 3


def test_http_400_is_bad_request():
    with pytest.raises(BadRequest):
        _completer(lambda r: httpx.Response(400)).complete(ChatRequest("x"))


def test_http_transport_error():
    def handler(request):
        raise httpx.ConnectError("down")

    with pytest.raises(TransportError):
        _completer(handler, max_retries=1).complete(ChatRequest("x"))


def test_http_null_content_is_empty_completion():
    body = {"choices": [{"message": {"content": None}}]}
    with pytest.raises(EmptyCompletion):
        _completer(lambda r: httpx.Response(200, json=body)).complete(ChatRequest("x"))


def test_token_bucket_waits_when_empty():
    now = [0.0]
    slept = []

    def sleep(s):
        slept.append(s)
        now[0] += s

    bucket = TokenBucket(2.0, burst=1, clock=lambda: now[0], sleep=sleep)
    bucket.acquire()
    bucket.acquire()
    assert slept and slept[0] == pytest.approx(0.5)
