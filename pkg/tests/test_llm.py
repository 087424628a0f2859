import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import httpx
import pytest
from hypothesis import given, strategies as st

from ckma.errors import (
    BackendConfigError,
    ExtractionError,
    MinigraphParseError,
    RequestError,
    ScriptExhaustedError,
    TransportError,
)
from ckma.graph import minigraph_from_json
from ckma.llm import (
    REPROMPT_INSTRUCTION,
    CompletionRequest,
    HttpBackend,
    MockBackend,
    RecordingBackend,
    RetryPolicy,
    complete_json,
    extract_json,
    load_mock_script,
)


def req(text="hi"):
    return CompletionRequest(system_text="sys", user_text=text)


def test_request_invariants():
    with pytest.raises(ValueError):
        CompletionRequest("s", "")
    with pytest.raises(ValueError):
        CompletionRequest("s", "u", temperature=2.5)
    with pytest.raises(ValueError):
        RetryPolicy(max_attempts=0)


class TestMock:
    def test_scripted(self):
        mock = MockBackend.scripted(["hello"])
        assert mock.complete(req()).text == "hello"
        with pytest.raises(ScriptExhaustedError):
            mock.complete(req())

    def test_scripted_cycle(self):
        mock = MockBackend.scripted(["a", "b"], cycle=True)
        assert [mock.complete(req()).text for _ in range(5)] == ["a", "b", "a", "b", "a"]

    def test_echo(self):
        assert MockBackend.echo().complete(req("say this")).text == "say this"

    def test_rules(self):
        mock = MockBackend.from_rules([(r"name: (\w+)", r"hello \1"), ("JSON", "{}")], default="?")
        assert mock.complete(req("my name: ada")).text == "hello ada"
        assert mock.complete(req("give JSON")).text == "{}"
        assert mock.complete(req("nothing")).text == "?"
        with pytest.raises(ScriptExhaustedError):
            MockBackend.from_rules([("x", "y")]).complete(req("z"))

    def test_same_script_same_responses(self):
        runs = []
        for _ in range(2):
            mock = MockBackend.scripted(["a", "b", "c"])
            runs.append([mock.complete(req(str(i))).text for i in range(3)])
        assert runs[0] == runs[1]

    def test_load_script_shapes(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps(["x", "y"]))
        assert load_mock_script(p).complete(req()).text == "x"
        p.write_text(json.dumps({"mode": "echo"}))
        assert load_mock_script(p).complete(req("e")).text == "e"
        p.write_text(json.dumps({"mode": "rules", "rules": [{"pattern": "a", "response": "A"}]}))
        assert load_mock_script(p).complete(req("a")).text == "A"
        p.write_text(json.dumps({"mode": "scripted", "responses": ["1"], "cycle": True}))
        backend = load_mock_script(p)
        assert [backend.complete(req()).text for _ in range(2)] == ["1", "1"]
        assert backend.describe() == {"kind": "mock", "mode": "scripted", "script": str(p)}
        p.write_text(json.dumps({"mode": "telepathy"}))
        with pytest.raises(BackendConfigError):
            load_mock_script(p)
        p.write_text("not json")
        with pytest.raises(BackendConfigError):
            load_mock_script(p)

    def test_recording_wrapper(self):
        rec = RecordingBackend(MockBackend.echo())
        rec.complete(req("one"))
        rec.complete(req("two"))
        assert rec.calls == 2
        assert [r.user_text for r in rec.requests] == ["one", "two"]


class TestExtractJson:
    def test_fenced(self):
        assert extract_json('Here you go:\n```json\n{"relations":[]}\n```') == '{"relations":[]}'

    def test_identity(self):
        assert extract_json('{"relations":[]}') == '{"relations":[]}'

    def test_absent(self):
        with pytest.raises(ExtractionError) as err:
            extract_json("I cannot comply.")
        assert "I cannot comply." in str(err.value)

    def test_prose_around_object(self):
        text = 'Sure! {"a": {"b": "}"}} and then {"c": 1}'
        assert extract_json(text) == '{"a": {"b": "}"}}'

    def test_skips_unparseable_braces(self):
        assert extract_json('set {x} then {"ok": true}') == '{"ok": true}'

    def test_prefers_fenced_block(self):
        text = 'Schema {"relations": "..."}\n```\n{"relations": [1]}\n```'
        assert extract_json(text) == '{"relations": [1]}'

    def test_unbalanced(self):
        with pytest.raises(ExtractionError):
            extract_json('{"relations": [')

    def test_top_level_array_is_not_an_object(self):
        with pytest.raises(ExtractionError):
            extract_json("[1, 2, 3]")

    @given(st.text(max_size=60))
    def test_idempotent(self, noise):
        text = f'{noise}```json\n{{"k": {json.dumps(noise)}}}\n```{noise}'
        try:
            once = extract_json(text)
        except ExtractionError:
            return
        assert extract_json(once) == once


class TestCompleteJson:
    def test_reprompts_once(self):
        rec = RecordingBackend(MockBackend.scripted(["no json here", '{"relations": []}']))
        value, calls = complete_json(rec, req("build"), minigraph_from_json)
        assert value == [] and calls == 2
        assert rec.requests[1].user_text.endswith(REPROMPT_INSTRUCTION)

    def test_schema_error_also_reprompts(self):
        rec = RecordingBackend(MockBackend.scripted(['{"rels": []}', '{"relations": []}']))
        assert complete_json(rec, req(), minigraph_from_json) == ([], 2)

    def test_gives_up_after_reprompt(self):
        mock = MockBackend.scripted(["nope", '{"rels": []}'])
        with pytest.raises(MinigraphParseError):
            complete_json(mock, req(), minigraph_from_json)


def chat_body(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}],
            "usage": {"prompt_tokens": 5, "completion_tokens": 2}}


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv("CKMA_API_KEY", "test-key")


def http_backend(handler, **kw):
    kw.setdefault("retry", RetryPolicy(max_attempts=3, initial_delay=0.0))
    return HttpBackend(base_url="http://llm.test/v1", model_id="m-1",
                       transport=httpx.MockTransport(handler), **kw)


class TestHttp:
    def test_missing_key(self, monkeypatch):
        monkeypatch.delenv("CKMA_API_KEY", raising=False)
        with pytest.raises(BackendConfigError):
            HttpBackend()

    def test_request_shape_and_response(self, api_key):
        seen = {}

        def handler(request):
            seen["url"] = str(request.url)
            seen["auth"] = request.headers["authorization"]
            seen["body"] = json.loads(request.content)
            return httpx.Response(200, json=chat_body("done"))

        backend = http_backend(handler)
        resp = backend.complete(CompletionRequest("S", "U", temperature=0.0, max_output_tokens=77))
        assert resp.text == "done"
        assert resp.token_usage == (5, 2)
        assert seen["url"] == "http://llm.test/v1/chat/completions"
        assert seen["auth"] == "Bearer test-key"
        assert seen["body"] == {
            "model": "m-1",
            "messages": [{"role": "system", "content": "S"}, {"role": "user", "content": "U"}],
            "temperature": 0.0,
            "max_tokens": 77,
        }

    def test_retries_then_succeeds(self, api_key):
        statuses = iter([429, 503, 200])
        sleeps = []

        def handler(request):
            status = next(statuses)
            if status == 200:
                return httpx.Response(200, json=chat_body("ok"))
            return httpx.Response(status, text="busy")

        backend = http_backend(handler, retry=RetryPolicy(3, initial_delay=0.5, multiplier=2.0),
                               sleep=sleeps.append)
        assert backend.complete(req()).text == "ok"
        assert backend.attempts == 3
        assert sleeps == [0.5, 1.0]

    def test_retry_exhaustion(self, api_key):
        backend = http_backend(lambda r: httpx.Response(500, text="boom"),
                               retry=RetryPolicy(max_attempts=2, initial_delay=0.0))
        with pytest.raises(TransportError) as err:
            backend.complete(req())
        assert err.value.attempts == 2
        assert backend.attempts == 2

    def test_client_error_is_not_retried(self, api_key):
        backend = http_backend(lambda r: httpx.Response(401, text="bad key"))
        with pytest.raises(RequestError) as err:
            backend.complete(req())
        assert err.value.status == 401 and "bad key" in err.value.body
        assert backend.attempts == 1

    def test_garbled_body(self, api_key):
        backend = http_backend(lambda r: httpx.Response(200, json={"nothing": 1}))
        with pytest.raises(RequestError):
            backend.complete(req())

    def test_unreachable_endpoint(self, api_key):
        backend = HttpBackend(base_url="http://127.0.0.1:9/v1", timeout_seconds=2.0,
                              retry=RetryPolicy(max_attempts=2, initial_delay=0.0))
        with pytest.raises(TransportError) as err:
            backend.complete(req())
        assert err.value.attempts == 2
        assert backend.attempts == 2

    def test_concurrency_cap(self, api_key):
        active = 0
        peak = 0
        lock = threading.Lock()

        def handler(request):
            nonlocal active, peak
            with lock:
                active += 1
                peak = max(peak, active)
            time.sleep(0.02)
            with lock:
                active -= 1
            return httpx.Response(200, json=chat_body("x"))

        backend = http_backend(handler, max_concurrency=2)
        with ThreadPoolExecutor(max_workers=8) as pool:
            list(pool.map(lambda i: backend.complete(req()), range(16)))
        assert 1 <= peak <= 2
