"""Remote agent against an in-process OpenAI-compatible stub server."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from vog.agents import AgentRequest, RemoteAgent
from vog.errors import HttpStatusError, TransportError


class StubEndpoint:
    """Chat-completions stub: canned replies, optional injected failures."""

    def __init__(self, replies, fail_first=0, fail_status=500):
        self.replies = list(replies)
        self.fail_budget = fail_first
        self.fail_status = fail_status
        self.requests = []  # decoded JSON payloads, in arrival order
        self.call_count = 0

        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length) or b"{}")
                stub.requests.append(payload)
                stub.call_count += 1
                if stub.fail_budget > 0:
                    stub.fail_budget -= 1
                    self.send_response(stub.fail_status)
                    self.end_headers()
                    self.wfile.write(b"injected failure")
                    return
                reply = stub.replies.pop(0)
                body = json.dumps(
                    {"choices": [{"message": {"role": "assistant", "content": reply}}]}
                ).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self):
        host, port = self.server.server_address
        return f"http://{host}:{port}/v1"

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def no_sleep():
    return lambda seconds: None


def make_request(round_index=1, image=b"\x89PNG fake"):
    return AgentRequest(
        system_prompt="system",
        user_prompt="user",
        grid_image=image,
        round_index=round_index,
    )


def test_happy_path_returns_parsed_action(no_sleep):
    stub = StubEndpoint(['{"NextAction": 3}'])
    try:
        agent = RemoteAgent(stub.url, "test-model", sleep=no_sleep)
        reply = agent.decide(make_request())
        assert reply.parsed_action == 3
        assert stub.call_count == 1
        payload = stub.requests[0]
        assert payload["temperature"] == 0
        assert payload["model"] == "test-model"
        content = payload["messages"][1]["content"]
        assert content[0]["type"] == "text"
        assert content[1]["image_url"]["url"].startswith("data:image/png;base64,")
    finally:
        stub.close()


def test_retries_through_injected_500s(no_sleep):
    stub = StubEndpoint(['{"NextAction": 1}'], fail_first=2)
    try:
        agent = RemoteAgent(stub.url, "test-model", retry_budget=2, sleep=no_sleep)
        reply = agent.decide(make_request())
        assert reply.parsed_action == 1
        assert stub.call_count == 3
    finally:
        stub.close()


def test_retry_budget_exhaustion_raises(no_sleep):
    stub = StubEndpoint([], fail_first=10)
    try:
        agent = RemoteAgent(stub.url, "test-model", retry_budget=2, sleep=no_sleep)
        with pytest.raises(HttpStatusError):
            agent.decide(make_request())
        assert stub.call_count == 3  # initial try plus two retries
    finally:
        stub.close()


def test_client_error_fails_immediately(no_sleep):
    stub = StubEndpoint([], fail_first=5, fail_status=400)
    try:
        agent = RemoteAgent(stub.url, "test-model", retry_budget=2, sleep=no_sleep)
        with pytest.raises(HttpStatusError):
            agent.decide(make_request())
        assert stub.call_count == 1
    finally:
        stub.close()


def test_unreachable_host_raises_transport_error(no_sleep):
    agent = RemoteAgent(
        "http://127.0.0.1:9/v1", "test-model", retry_budget=1, timeout=0.5, sleep=no_sleep
    )
    with pytest.raises(TransportError):
        agent.decide(make_request())


def test_request_is_not_mutated_between_retries(no_sleep):
    stub = StubEndpoint(['{"NextAction": 2}'], fail_first=2)
    try:
        agent = RemoteAgent(stub.url, "test-model", retry_budget=2, sleep=no_sleep)
        agent.decide(make_request())
        assert len(stub.requests) == 3
        assert stub.requests[0] == stub.requests[1] == stub.requests[2]
    finally:
        stub.close()


def test_backoff_schedule_is_exponential():
    delays = []
    stub = StubEndpoint(['{"NextAction": 1}'], fail_first=2)
    try:
        agent = RemoteAgent(stub.url, "test-model", retry_budget=2, sleep=delays.append)
        agent.decide(make_request())
        assert delays == [1.0, 2.0]
    finally:
        stub.close()


def test_query_extraction_round_trip(no_sleep):
    stub = StubEndpoint(['{"target": "chair", "anchors": ["tv"]}'])
    try:
        agent = RemoteAgent(stub.url, "test-model", sleep=no_sleep)
        result = agent.extract_query("the chair facing the TV", ["chair", "tv", "sofa"])
        assert result == ("chair", ["tv"])
    finally:
        stub.close()


def test_query_extraction_abstains_on_garbage(no_sleep):
    stub = StubEndpoint(["no json here"])
    try:
        agent = RemoteAgent(stub.url, "test-model", sleep=no_sleep)
        assert agent.extract_query("anything", ["chair"]) is None
    finally:
        stub.close()


def test_env_configuration(monkeypatch, no_sleep):
    monkeypatch.setenv("VOG_ENDPOINT", "http://example.invalid/v1")
    monkeypatch.setenv("VOG_MODEL", "qwen-test")
    monkeypatch.setenv("VOG_API_KEY", "secret")
    agent = RemoteAgent.from_env(sleep=no_sleep)
    assert agent.endpoint_url == "http://example.invalid/v1"
    assert agent.model_name == "qwen-test"
    assert agent.api_key == "secret"
