"""Gateway wire protocol, retries, and strict output parsing."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from swesim import gateway as gw

# ---------------------------------------------------------------------------
# Output-parser fixtures: (kind, raw completion, expected outcome)
# Outcome is either a dict of expected fields or an exception type.
# ---------------------------------------------------------------------------

SWT_OK = {"stdout": "ok", "stderr": "", "exit_code": 0}

PARSE_FIXTURES = [
    # clean JSON
    ("swt", '{"stdout": "ok", "stderr": "", "exit_code": 0}', SWT_OK),
    ("swt", '{"stdout": "12 passed", "stderr": "", "exit_code": 0}',
     {"stdout": "12 passed", "exit_code": 0}),
    ("swt", '{"stdout": "", "stderr": "Traceback (most recent call last):\\n  ValueError", "exit_code": 1}',
     {"stderr": "Traceback (most recent call last):\n  ValueError", "exit_code": 1}),
    ("swr", '{"test_report": "all tests pass", "reward": 1}', {"test_report": "all tests pass", "reward": 1}),
    ("swr", '{"test_report": "2 failed", "reward": 0}', {"reward": 0}),
    # think-wrapped
    ("swr", '<think>trace</think>{"test_report": "all pass", "reward": 1}',
     {"think": "trace", "reward": 1}),
    ("swt", '<think>the import will fail</think>{"stdout": "", "stderr": "ImportError", "exit_code": 1}',
     {"stderr": "ImportError", "exit_code": 1}),
    ("swr", '  <think>\nmultiline\nreasoning\n</think>\n{"test_report": "ok", "reward": 1}',
     {"think": "\nmultiline\nreasoning\n", "reward": 1}),
    # leading/trailing prose
    ("swt", 'Sure! Here is the result:\n{"stdout": "done", "stderr": "", "exit_code": 0}\nHope that helps!',
     {"stdout": "done"}),
    ("swr", '{"test_report": "ok", "reward": 1} trailing words', {"reward": 1}),
    ("swr", 'prose with {curly} distraction {"test_report": "ok", "reward": 0}', {"reward": 0}),
    ("swt", '```json\n{"stdout": "fenced", "stderr": "", "exit_code": 0}\n```', {"stdout": "fenced"}),
    # coercions
    ("swr", '{"test_report": "ok", "reward": "1"}', {"reward": 1}),
    ("swr", '{"test_report": "ok", "reward": "0"}', {"reward": 0}),
    ("swr", '{"test_report": "ok", "reward": 1.0}', {"reward": 1}),
    ("swt", '{"stdout": "x", "stderr": "", "exit_code": "2"}', {"exit_code": 2}),
    ("swt", '{"stdout": null, "stderr": null, "exit_code": 0}', {"stdout": "", "stderr": ""}),
    # nested / escaped content
    ("swt", '{"stdout": "{\\"inner\\": 1}", "stderr": "", "exit_code": 0}', {"stdout": '{"inner": 1}'}),
    ("swr", '<think>a { b } c</think> {"test_report": "with {braces}", "reward": 1}',
     {"test_report": "with {braces}"}),
    ("swt", '{"stdout": "line1\\nline2", "stderr": "", "exit_code": 0, "extra": "ignored"}',
     {"stdout": "line1\nline2"}),
    # malformed inputs -> typed errors
    ("swt", "Sure! Here is what would happen...", gw.NoJsonFound),
    ("swr", "", gw.NoJsonFound),
    ("swt", '{"stdout": "missing the rest"', gw.NoJsonFound),
    ("swt", '{"stdout": "ok", "stderr": ""}', gw.MissingKey),
    ("swr", '{"test_report": "ok"}', gw.MissingKey),
    ("swr", '{"reward": 1}', gw.MissingKey),
    ("swr", '{"test_report": "ok", "reward": 2}', gw.InvalidRewardValue),
    ("swr", '{"test_report": "ok", "reward": "yes"}', gw.InvalidRewardValue),
    ("swt", '<think>never closed {"stdout": "x"}', gw.UnterminatedThinkBlock),
    ("swt", '{"stdout": "ok", "stderr": "", "exit_code": "abc"}', gw.MissingKey),
]


def test_fixture_corpus_size():
    assert len(PARSE_FIXTURES) == 30


@pytest.mark.parametrize("kind,text,expected", PARSE_FIXTURES)
def test_parse_fixture(kind, text, expected):
    if isinstance(expected, type):
        with pytest.raises(expected):
            gw.parse_model_output(kind, text)
        return
    output = gw.parse_model_output(kind, text)
    for key, value in expected.items():
        assert getattr(output, key) == value


def test_prefix_stability():
    base = '{"test_report": "ok", "reward": 1}'
    first = gw.parse_model_output("swr", base)
    second = gw.parse_model_output("swr", base + "\n\nFootnote: more prose {not json}")
    assert first == second


def test_parser_never_raises_untyped():
    import random

    rng = random.Random(0)
    alphabet = '{}[]"<>think/ abc123:,'
    for _ in range(200):
        text = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 60)))
        try:
            gw.parse_model_output("swr", text)
        except gw.OutputParseError:
            pass


# ---------------------------------------------------------------------------
# Transport behavior against a fault-injecting stub server
# ---------------------------------------------------------------------------


class _StubHandler(BaseHTTPRequestHandler):
    failures_remaining = 0
    calls = 0

    def do_POST(self):
        cls = type(self)
        cls.calls += 1
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        if cls.failures_remaining > 0:
            cls.failures_remaining -= 1
            self.send_response(500)
            self.end_headers()
            return
        reply = {
            "choices": [
                {"message": {"role": "assistant", "content": f"echo:{body['messages'][1]['content']}"}}
            ]
        }
        data = json.dumps(reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):  # silence test output
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.failures_remaining = 0
    _StubHandler.calls = 0
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


def test_http_roundtrip(stub_server):
    gateway = gw.ModelGateway(gw.HttpBackend(), sleep_fn=lambda s: None)
    endpoint = gw.ModelEndpoint(base_url=stub_server, model_name="stub")
    reply = gateway.complete(endpoint, "system", "hello")
    assert reply == "echo:hello"


def test_retry_after_two_500s(stub_server):
    _StubHandler.failures_remaining = 2
    sleeps: list[float] = []
    gateway = gw.ModelGateway(gw.HttpBackend(), sleep_fn=sleeps.append)
    endpoint = gw.ModelEndpoint(base_url=stub_server, max_retries=3)
    reply = gateway.complete(endpoint, "system", "retry me")
    assert reply == "echo:retry me"
    assert _StubHandler.calls == 3
    assert sleeps == [0.5, 1.0]  # exponential backoff


def test_gives_up_after_max_retries(stub_server):
    _StubHandler.failures_remaining = 10
    gateway = gw.ModelGateway(gw.HttpBackend(), sleep_fn=lambda s: None)
    endpoint = gw.ModelEndpoint(base_url=stub_server, max_retries=2)
    with pytest.raises(gw.EndpointUnreachable):
        gateway.complete(endpoint, "system", "doomed")
    assert _StubHandler.calls == 3


def test_context_too_long_without_network():
    gateway = gw.ModelGateway(gw.HttpBackend(), sleep_fn=lambda s: None)
    endpoint = gw.ModelEndpoint(base_url="http://192.0.2.1:9", max_context_tokens=10)
    with pytest.raises(gw.ContextTooLong):
        gateway.complete(endpoint, "x" * 30, "y" * 30)


def test_token_estimate_is_bytes_over_four():
    assert gw.estimate_tokens("a" * 128) == 32
    assert gw.estimate_tokens("") == 0
    assert gw.estimate_tokens("abc") == 1  # rounds up


# ---------------------------------------------------------------------------
# Mock / replay / recording backends
# ---------------------------------------------------------------------------


def test_mock_backend_scripting():
    backend = gw.MockBackend().script("swt", "prompt one", "reply one")
    backend.script_wildcard("swt", "fallback")
    gateway = gw.ModelGateway(backend, sleep_fn=lambda s: None)
    endpoint = gw.ModelEndpoint()
    assert gateway.complete(endpoint, "s", "prompt one", kind="swt") == "reply one"
    assert gateway.complete(endpoint, "s", "anything else", kind="swt") == "fallback"


def test_mock_backend_unscripted_raises():
    gateway = gw.ModelGateway(gw.MockBackend(), sleep_fn=lambda s: None)
    with pytest.raises(gw.EndpointUnreachable):
        gateway.complete(gw.ModelEndpoint(), "s", "u", kind="swr")


def test_recording_then_replay(tmp_path):
    log = tmp_path / "log.jsonl"
    scripted = gw.MockBackend().script_wildcard(None, '{"test_report": "ok", "reward": 1}')
    recording = gw.RecordingBackend(scripted, log)
    gateway = gw.ModelGateway(recording, sleep_fn=lambda s: None)
    endpoint = gw.ModelEndpoint()
    first = gateway.complete(endpoint, "s", "the prompt", kind="swr")

    replay = gw.ModelGateway(gw.ReplayBackend(log), sleep_fn=lambda s: None)
    second = replay.complete(endpoint, "s", "the prompt", kind="swr")
    assert first == second
    with pytest.raises(gw.EndpointUnreachable):
        replay.complete(endpoint, "s", "never recorded", kind="swr")


def test_query_swt_fallback_on_garbage():
    backend = gw.MockBackend().script_wildcard("swt", "I cannot answer that")
    gateway = gw.ModelGateway(backend, sleep_fn=lambda s: None)
    output, ok = gateway.query_swt(gw.ModelEndpoint(), "s", "u")
    assert not ok
    assert output == gw.SWT_FALLBACK
    assert output.exit_code == 1
    # the initial attempt plus three reprompts
    assert len(backend.calls) == 4


def test_query_swr_fallback_is_reward_zero():
    backend = gw.MockBackend().script_wildcard("swr", "nope")
    gateway = gw.ModelGateway(backend, sleep_fn=lambda s: None)
    output, ok = gateway.query_swr(gw.ModelEndpoint(), "s", "u")
    assert (output.reward, ok) == (0, False)


def test_query_reprompt_can_recover():
    backend = gw.MockBackend()
    backend.script("swr", "the prompt", "garbage first")
    backend.script("swr", "the prompt", '{"test_report": "ok", "reward": 1}')
    gateway = gw.ModelGateway(backend, sleep_fn=lambda s: None)
    output, ok = gateway.query_swr(gw.ModelEndpoint(), "s", "the prompt")
    assert (output.reward, ok) == (1, True)


def test_softmax_yes_score():
    import math

    assert gw.softmax_yes_score(0.0, 0.0) == pytest.approx(0.5)
    l_yes, l_no = 1.3, -0.2
    expected = math.exp(l_yes) / (math.exp(l_yes) + math.exp(l_no))
    assert gw.softmax_yes_score(l_yes, l_no) == pytest.approx(expected)
    assert gw.softmax_yes_score(1000.0, -1000.0) > 0.999  # no overflow


def test_endpoint_env_override(monkeypatch):
    monkeypatch.setenv("SWT_ENDPOINT", "http://override:9000/v1")
    monkeypatch.setenv("SWT_MODEL", "custom-model")
    endpoint = gw.endpoint_from_env("swt", gw.ModelEndpoint(base_url="http://default"))
    assert endpoint.base_url == "http://override:9000/v1"
    assert endpoint.model_name == "custom-model"
