from __future__ import annotations

import json
import logging
import random

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gamearena.gateway import (
    AuthError,
    CompletionRequest,
    ExhaustedRetriesError,
    Gateway,
    MalformedResponseError,
    ProfileError,
    ProviderError,
    RetryPolicy,
    Sampling,
    build_request,
    extract_text,
    load_profiles,
)
from gamearena.mockserver import MockLLMServer

from conftest import CAMPAIGNS

PROFILES = load_profiles((CAMPAIGNS / "profiles.example.json").read_text())
SECRET = "sk-test-0123456789"


def scripted_transport(statuses, text="Option A", seen=None):
    """httpx transport answering with ``statuses`` in order, then 200s."""
    queue = list(statuses)

    def handler(request: httpx.Request) -> httpx.Response:
        if seen is not None:
            seen.append(request)
        status = queue.pop(0) if queue else 200
        if status == "timeout":
            raise httpx.ReadTimeout("slow", request=request)
        if status != 200:
            return httpx.Response(status, json={"error": "x"})
        return httpx.Response(200, json={"choices": [{"message": {"content": text}}]})

    return httpx.MockTransport(handler)


def gateway_with(transport, sleeps=None, **kw):
    return Gateway(PROFILES, client=httpx.Client(transport=transport), sleep=(sleeps.append if sleeps is not None else lambda s: None),
                   rng=random.Random(0), env={"MISTRAL_API_KEY": SECRET, "OPENAI_API_KEY": SECRET}, **kw)


def test_example_profiles_load():
    assert set(PROFILES) == {"llama-3.1-405b", "mistral-large", "gpt-4", "claude-3.5-sonnet"}
    assert PROFILES["llama-3.1-405b"].sampling == Sampling(0.9, 0.6, 40)


def test_sampling_passthrough_over_mock():
    with MockLLMServer(replies=["Option B"]) as server:
        gw = Gateway(PROFILES, mock_endpoint=server.url, env={})
        result = gw.complete("mistral-large", CompletionRequest("hi"))
    assert result.text == "Option B" and result.attempts == 1
    kind, body = server.requests[0]
    assert kind == "openai_style"
    assert body["temperature"] == 0.3 and body["top_p"] == 1
    assert "top_k" not in body


def test_retry_after_rate_limit():
    with MockLLMServer(replies=[429, "Option A"]) as server:
        sleeps = []
        gw = Gateway(PROFILES, mock_endpoint=server.url, env={}, sleep=sleeps.append, rng=random.Random(1))
        result = gw.complete("gpt-4", CompletionRequest("hi"))
    assert result.text == "Option A" and result.attempts == 2
    assert len(sleeps) == 1 and 1.0 <= sleeps[0] <= 2.0


def test_missing_credential_fails_before_any_request():
    seen = []
    gw = Gateway(PROFILES, client=httpx.Client(transport=scripted_transport([], seen=seen)), env={})
    with pytest.raises(AuthError, match="OPENAI_API_KEY"):
        gw.complete("gpt-4", CompletionRequest("hi"))
    assert seen == []


@pytest.mark.parametrize("status", [401, 403])
def test_auth_rejection_not_retried(status):
    seen = []
    gw = gateway_with(scripted_transport([status], seen=seen))
    with pytest.raises(AuthError):
        gw.complete("gpt-4", CompletionRequest("hi"))
    assert len(seen) == 1


def test_client_errors_not_retried():
    seen = []
    with pytest.raises(ProviderError) as err:
        gateway_with(scripted_transport([400], seen=seen)).complete("gpt-4", CompletionRequest("hi"))
    assert err.value.status == 400 and len(seen) == 1


def test_timeouts_and_server_errors_retried():
    gw = gateway_with(scripted_transport(["timeout", 503, 500]))
    assert gw.complete("gpt-4", CompletionRequest("hi")).attempts == 4


def test_gives_up_after_budget():
    seen, sleeps = [], []
    gw = gateway_with(scripted_transport([429] * 10, seen=seen), sleeps, retry=RetryPolicy(max_retries=5))
    with pytest.raises(ExhaustedRetriesError) as err:
        gw.complete("gpt-4", CompletionRequest("hi"))
    assert err.value.attempts == 6 and len(seen) == 6 and len(sleeps) == 5


def test_wire_bodies():
    openai = build_request(PROFILES["gpt-4"], "p")
    assert openai["model"] == "gpt-4" and openai["messages"] == [{"role": "user", "content": "p"}]
    anthropic = build_request(PROFILES["claude-3.5-sonnet"], "p")
    assert anthropic["model"] == "claude-3-5-sonnet-20241022" and anthropic["max_tokens"] == 1024
    assert "top_p" not in anthropic and "top_k" not in anthropic
    generic = build_request(PROFILES["llama-3.1-405b"], "p", 64)
    assert generic == {"model": "meta/meta-llama-3.1-405b-instruct", "prompt": "p",
                       "params": {"temperature": 0.9, "top_p": 0.6, "top_k": 40, "max_tokens": 64}}


def test_number_types_survive_serialization():
    body = json.dumps(build_request(PROFILES["mistral-large"], "p"))
    assert '"top_p": 1' in body and '"top_p": 1.0' not in body
    assert '"temperature": 1.0' in json.dumps(build_request(PROFILES["gpt-4"], "p"))


@pytest.mark.parametrize("kind, payload, text", [
    ("openai_style", {"choices": [{"message": {"content": "x"}}]}, "x"),
    ("anthropic_style", {"content": [{"type": "text", "text": "a"}, {"type": "text", "text": "b"}]}, "ab"),
    ("generic_http", {"output": ["Op", "tion A"]}, "Option A"),
])
def test_extract_text(kind, payload, text):
    assert extract_text(kind, payload) == text


@pytest.mark.parametrize("kind, payload", [
    ("openai_style", {"choices": []}), ("anthropic_style", {"content": []}), ("generic_http", {"text": "  "}),
])
def test_malformed_payloads(kind, payload):
    with pytest.raises(MalformedResponseError):
        extract_text(kind, payload)


def test_all_three_styles_over_mock():
    with MockLLMServer(responder=lambda kind, prompt: f"{kind} ok") as server:
        gw = Gateway(PROFILES, mock_endpoint=server.url, env={})
        for pid in PROFILES:
            assert gw.complete(pid, CompletionRequest("x")).text == f"{PROFILES[pid].provider_kind} ok"
    assert sorted(k for k, _ in server.requests) == ["anthropic_style", "generic_http", "openai_style", "openai_style"]


def test_credentials_sent_as_headers_over_mock():
    with MockLLMServer(replies=["ok", "ok"]) as server:
        gw = Gateway(PROFILES, mock_endpoint=server.url, env={"ANTHROPIC_API_KEY": SECRET, "OPENAI_API_KEY": SECRET})
        gw.complete("claude-3.5-sonnet", CompletionRequest("x"))
        gw.complete("gpt-4", CompletionRequest("x"))
    lowered = [{k.lower(): v for k, v in h.items()} for h in server.headers]
    assert lowered[0]["x-api-key"] == SECRET and "anthropic-version" in lowered[0]
    assert lowered[1]["authorization"] == f"Bearer {SECRET}"


@pytest.mark.parametrize("doc", [
    '[{"id": "x", "provider": "grpc", "model": "m", "sampling": {"temperature": 1}}]',
    '[{"id": "x", "provider": "openai_style", "model": "m", "sampling": {"temperature": -1}}]',
    '[{"id": "x", "provider": "openai_style", "model": "m", "sampling": {"temperature": 1, "top_p": 0}}]',
    '[{"id": "x", "provider": "openai_style", "model": "m"}]',
    '{"id": "x"}',
    '[{"id": "x", "provider": "openai_style", "model": "m", "sampling": {"temperature": 1}},'
    ' {"id": "x", "provider": "openai_style", "model": "m", "sampling": {"temperature": 1}}]',
])
def test_bad_profiles(doc):
    with pytest.raises(ProfileError):
        load_profiles(doc)


def test_unknown_profile():
    with pytest.raises(ProfileError):
        Gateway(PROFILES).profile("gpt-5")


# ---- properties -----------------------------------------------------------

@given(failures=st.integers(0, 12), budget=st.integers(0, 6))
@settings(max_examples=40, deadline=None)
def test_attempts_never_exceed_budget(failures, budget):
    seen, sleeps = [], []
    gw = gateway_with(scripted_transport([503] * failures, seen=seen), sleeps, retry=RetryPolicy(max_retries=budget))
    try:
        result = gw.complete("gpt-4", CompletionRequest("hi"))
        assert result.attempts == failures + 1 <= budget + 1
    except ExhaustedRetriesError:
        assert failures > budget
    assert len(seen) <= budget + 1
    assert len(sleeps) == len(seen) - 1


@given(base=st.floats(0.01, 5), cap=st.floats(0.01, 60), n=st.integers(1, 15))
def test_backoff_nondecreasing_and_capped(base, cap, n):
    policy = RetryPolicy(max_retries=n, base_delay=base, max_delay=cap)
    delays = [policy.delay(i) for i in range(n)]
    assert all(a <= b for a, b in zip(delays, delays[1:]))
    assert all(d <= cap for d in delays)


@given(statuses=st.lists(st.sampled_from([200, 429, 500, 401, 400]), max_size=4))
@settings(max_examples=30, deadline=None)
def test_secret_never_logged(statuses):
    records = []

    class Catch(logging.Handler):
        def emit(self, record):
            records.append(self.format(record))

    handler = Catch(level=logging.DEBUG)
    root = logging.getLogger()
    root.addHandler(handler)
    old = root.level
    root.setLevel(logging.DEBUG)
    try:
        gw = gateway_with(scripted_transport(statuses), retry=RetryPolicy(max_retries=2))
        try:
            gw.complete("gpt-4", CompletionRequest("hi"))
        except Exception as exc:
            records.append(str(exc))
    finally:
        root.removeHandler(handler)
        root.setLevel(old)
    assert not any(SECRET in r for r in records)


def test_per_provider_cap():
    import threading
    import time
    from concurrent.futures import ThreadPoolExecutor

    in_flight, peak, lock = [0], [0], threading.Lock()

    def handler(request):
        with lock:
            in_flight[0] += 1
            peak[0] = max(peak[0], in_flight[0])
        time.sleep(0.02)
        with lock:
            in_flight[0] -= 1
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    gw = gateway_with(httpx.MockTransport(handler), per_provider_limit=2)
    with ThreadPoolExecutor(8) as pool:
        list(pool.map(lambda _: gw.complete("gpt-4", CompletionRequest("x")), range(16)))
    assert peak[0] == 2
