import json
import threading
from concurrent.futures import ThreadPoolExecutor

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgnav.backends import (
    API_KEY_ENV,
    HttpBackend,
    LexicalBackend,
    OracleBackend,
    ReplayBackend,
    load_gold_relations,
    stem,
    write_gold_relations,
)
from kgnav.errors import BackendUnavailableError, ConfigError, ProtocolError, ReplayMissError
from kgnav.gateway import CompletionRequest, LLMGateway, ResponseCache, fingerprint, read_cache_file
from kgnav.prompts import TASK_SELECT, selection_prompt


def req(prompt="hello", **kw):
    kw.setdefault("backend", "mock-lexical")
    return CompletionRequest(prompt=prompt, **kw)


class CountingBackend:
    name = "mock-replay"

    def __init__(self):
        self.calls = 0
        self._lock = threading.Lock()

    def generate(self, r):
        with self._lock:
            self.calls += 1
        return "out:" + r.prompt


def test_request_validation():
    with pytest.raises(ValueError):
        req("")
    with pytest.raises(ValueError):
        req(max_tokens=0)
    with pytest.raises(ValueError):
        req(temperature=-0.1)


def test_default_decoding_params():
    r = req()
    assert r.max_tokens == 1024 and r.temperature == 0.0


def test_fingerprint_stable_and_sensitive():
    assert fingerprint(req()) == fingerprint(req())
    assert fingerprint(req("hello")) != fingerprint(req("hellp"))
    assert fingerprint(req(temperature=0.0)) != fingerprint(req(temperature=0.7))
    assert fingerprint(req(model="a")) != fingerprint(req(model="b"))
    assert fingerprint(req(backend="http")) != fingerprint(req(backend="mock-lexical"))
    assert fingerprint(req(max_tokens=5)) != fingerprint(req(max_tokens=6))
    # integer and float temperatures are the same request
    assert fingerprint(req(temperature=0)) == fingerprint(req(temperature=0.0))


def test_fingerprint_known_value():
    # frozen so any change to the key layout (which invalidates caches) is deliberate
    assert fingerprint(req()) == fingerprint(
        CompletionRequest("hello", "mock-lexical", "", 1024, 0.0, ())
    )
    assert len(fingerprint(req())) == 64


def test_cache_hit_second_time():
    gw = LLMGateway(CountingBackend())
    r = gw.request("p")
    first = gw.complete(r)
    second = gw.complete(r)
    assert (first.cached, second.cached) == (False, True)
    assert first.text == second.text
    assert gw.backend.calls == 1


def test_cache_disabled_always_calls():
    gw = LLMGateway(CountingBackend(), cache=None)
    gw.ask("p")
    gw.ask("p")
    assert gw.backend.calls == 2


def test_cache_file_round_trip(tmp_path):
    path = tmp_path / "cache.jsonl"
    gw = LLMGateway(CountingBackend(), ResponseCache(path), model="m")
    gw.ask("p")
    rec = json.loads(path.read_text().splitlines()[0])
    assert set(rec) == {"fingerprint", "backend", "model", "response_text", "created_at"}
    assert rec["response_text"] == "out:p" and rec["model"] == "m"
    # a fresh gateway over the same file never contacts the backend
    gw2 = LLMGateway(CountingBackend(), ResponseCache(path), model="m")
    assert gw2.complete(gw2.request("p")).cached
    assert gw2.backend.calls == 0
    assert len(read_cache_file(path)) == 1


def test_cache_clear(tmp_path):
    path = tmp_path / "c.jsonl"
    cache = ResponseCache(path)
    LLMGateway(CountingBackend(), cache).ask("p")
    cache.clear()
    assert len(cache) == 0 and not path.exists()


def test_concurrent_identical_requests_hit_backend_once():
    gw = LLMGateway(CountingBackend())
    prompts = [f"p{i % 5}" for i in range(200)]
    with ThreadPoolExecutor(8) as pool:
        list(pool.map(gw.ask, prompts))
    assert gw.backend.calls == 5
    assert len(gw.backend_calls) == len(set(gw.backend_calls))


@given(st.lists(st.sampled_from(["a", "b", "c", "d"]), max_size=30))
def test_backend_never_sees_duplicate_fingerprints(prompts):
    gw = LLMGateway(CountingBackend())
    for p in prompts:
        gw.ask(p)
    assert len(gw.backend_calls) == len(set(gw.backend_calls)) == len(set(prompts))


def test_replay_miss():
    gw = LLMGateway(ReplayBackend())
    with pytest.raises(ReplayMissError):
        gw.ask("unknown")


def test_replay_hit_and_file(tmp_path):
    rb = ReplayBackend()
    gw = LLMGateway(rb, cache=ResponseCache(tmp_path / "rec.jsonl"))
    rb.add(gw.request("q"), "canned")
    assert gw.ask("q") == "canned"
    # the cache file doubles as a replay file
    again = LLMGateway(ReplayBackend.from_file(tmp_path / "rec.jsonl"), cache=None)
    assert again.ask("q") == "canned"


def test_stemming_rules():
    assert stem("written") == stem("write") == "writ"
    assert stem("movies") == stem("movie")
    assert stem("starred") == "star"
    assert stem("is") == "is"


def test_lexical_selects_by_overlap():
    prompt = selection_prompt("what movies did X write", "X", ["birth_year", "written_by"], 1)
    gw = LLMGateway(LexicalBackend())
    text = gw.ask(prompt, {"task": TASK_SELECT})
    assert "written_by" in text
    assert text.strip() == "written_by"


def test_lexical_ties_break_lexicographically():
    prompt = selection_prompt("nothing shared", "X", ["zeta", "alpha", "mid"], 2)
    assert LLMGateway(LexicalBackend()).ask(prompt, {"task": TASK_SELECT}).splitlines() == ["alpha", "mid"]


@pytest.mark.parametrize("backend", [LexicalBackend(), OracleBackend({"q": ["r"]})])
def test_mock_backends_are_referentially_transparent(backend):
    prompt = selection_prompt("what movies did X write", "X", ["r", "written_by"], 1)
    r = CompletionRequest(prompt, backend.name, tags=(("task", TASK_SELECT), ("question_id", "q"), ("hop", "1")))
    outs = {backend.generate(r) for _ in range(100)}
    assert len(outs) == 1


def test_oracle_follows_gold_path():
    backend = OracleBackend({"q": ["r1", "r2"]})
    gw = LLMGateway(backend)
    p = selection_prompt("question", "a", ["r1", "r2", "zz"], 1)
    assert gw.ask(p, {"task": TASK_SELECT, "question_id": "q", "hop": 1}) == "r1"
    assert gw.ask(p, {"task": TASK_SELECT, "question_id": "q", "hop": 2}) == "r2"
    assert gw.ask(p, {"task": TASK_SELECT, "question_id": "q", "hop": 3}) == "none"
    p2 = selection_prompt("question", "a", ["zz"], 1)
    assert gw.ask(p2, {"task": TASK_SELECT, "question_id": "q", "hop": 1}) == "none"
    with pytest.raises(ReplayMissError):
        gw.ask(p, {"task": TASK_SELECT, "question_id": "other", "hop": 1})


def test_sidecar_round_trip(tmp_path):
    path = tmp_path / "gold.jsonl"
    write_gold_relations(path, {"f:2": ["a", "b"], "f:1": ["c"]})
    assert load_gold_relations(path) == {"f:1": ["c"], "f:2": ["a", "b"]}


# ---- HTTP backend -------------------------------------------------------


def ok_payload(text="hi"):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


def http_backend(handler, **kw):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return HttpBackend("http://llm.test/v1", "model-x", api_key="k", client=client, backoff=0, **kw)


def test_http_success_and_request_shape():
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json=ok_payload("answer"))

    backend = http_backend(handler)
    r = CompletionRequest("prompt", "http", "model-x", max_tokens=7, temperature=0.5)
    assert backend.generate(r) == "answer"
    assert seen["url"] == "http://llm.test/v1/chat/completions"
    assert seen["auth"] == "Bearer k"
    assert seen["body"] == {
        "model": "model-x",
        "messages": [{"role": "user", "content": "prompt"}],
        "max_tokens": 7,
        "temperature": 0.5,
    }


def test_http_retries_transport_errors_then_succeeds():
    attempts = []

    def handler(request):
        attempts.append(1)
        if len(attempts) < 3:
            raise httpx.ConnectError("refused", request=request)
        return httpx.Response(200, json=ok_payload())

    assert http_backend(handler).generate(req(backend="http")) == "hi"
    assert len(attempts) == 3


def test_http_gives_up_after_three_attempts():
    attempts = []

    def handler(request):
        attempts.append(1)
        return httpx.Response(503)

    with pytest.raises(BackendUnavailableError):
        http_backend(handler).generate(req(backend="http"))
    assert len(attempts) == 3


def test_http_does_not_retry_4xx():
    attempts = []

    def handler(request):
        attempts.append(1)
        return httpx.Response(401, json={"error": "bad key"})

    with pytest.raises(BackendUnavailableError):
        http_backend(handler).generate(req(backend="http"))
    assert len(attempts) == 1


@pytest.mark.parametrize("body", [b"not json", b'{"choices": []}', b'{"choices": [{"message": {}}]}'])
def test_http_unparseable_payload(body):
    backend = http_backend(lambda request: httpx.Response(200, content=body))
    with pytest.raises(ProtocolError):
        backend.generate(req(backend="http"))


def test_http_key_only_from_environment(monkeypatch):
    monkeypatch.delenv(API_KEY_ENV, raising=False)
    with pytest.raises(ConfigError):
        HttpBackend("http://x", "m")
    monkeypatch.setenv(API_KEY_ENV, "secret")
    assert HttpBackend("http://x", "m")._headers["Authorization"] == "Bearer secret"
