from __future__ import annotations

import json
import logging

import pytest

from faultline.gateway import (
    ChatGateway,
    ConfigurationError,
    EndpointProfile,
    TransportError,
    request_hash,
)

PROFILE = EndpointProfile(
    base_url="https://mock.test/v1", model="judge-1",
    retries=3, backoff_base=0.25, credential_env="TEST_GATEWAY_KEY",
)
MESSAGES = [{"role": "user", "content": "diagnose this"}]


def ok_body(text: str = "a canned diagnosis") -> str:
    return json.dumps({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 12, "completion_tokens": 5},
    })


class FakeTransport:
    """Scripted transport: each entry is (status, body) or an exception."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = []

    def __call__(self, url, payload, headers, timeout):
        self.calls.append({"url": url, "payload": payload, "headers": headers})
        step = self.script.pop(0)
        if isinstance(step, Exception):
            raise step
        return step


def make_gateway(script, **kwargs):
    transport = FakeTransport(script)
    sleeps = []
    gw = ChatGateway(PROFILE, transport=transport, sleeper=sleeps.append, **kwargs)
    return gw, transport, sleeps


def test_mock_round_trip_returns_text_and_usage():
    gw, transport, _ = make_gateway([(200, ok_body())])
    assert gw.complete(MESSAGES) == "a canned diagnosis"
    assert gw.usage.calls == 1
    assert gw.usage.prompt_tokens == 12 and gw.usage.completion_tokens == 5
    assert transport.calls[0]["url"] == "https://mock.test/v1/chat/completions"
    assert transport.calls[0]["payload"]["model"] == "judge-1"


def test_retries_transient_500s_with_backoff():
    gw, transport, sleeps = make_gateway([(500, "boom"), (500, "boom"), (200, ok_body())])
    assert gw.complete(MESSAGES) == "a canned diagnosis"
    assert len(transport.calls) == 3
    assert sleeps == [0.25, 0.5]  # exponential backoff


def test_timeouts_are_retryable():
    gw, transport, _ = make_gateway([TimeoutError("slow"), (200, ok_body())])
    assert gw.complete(MESSAGES) == "a canned diagnosis"
    assert len(transport.calls) == 2


def test_exhausted_retries_raise_transport_error():
    gw, transport, _ = make_gateway([(500, "x")] * 4)
    with pytest.raises(TransportError, match="after 4 attempts"):
        gw.complete(MESSAGES)
    assert len(transport.calls) == 4


def test_http_4xx_is_configuration_error_with_no_retry():
    gw, transport, _ = make_gateway([(401, "bad key"), (200, ok_body())])
    with pytest.raises(ConfigurationError):
        gw.complete(MESSAGES)
    assert len(transport.calls) == 1


def test_malformed_body_is_configuration_error():
    gw, _, _ = make_gateway([(200, "not json")])
    with pytest.raises(ConfigurationError, match="malformed"):
        gw.complete(MESSAGES)


def test_credential_sent_but_never_logged(monkeypatch, caplog):
    monkeypatch.setenv("TEST_GATEWAY_KEY", "sk-supersecret-123")
    gw, transport, _ = make_gateway([(200, ok_body())])
    with caplog.at_level(logging.DEBUG, logger="faultline.gateway"):
        gw.complete(MESSAGES)
    assert transport.calls[0]["headers"]["Authorization"] == "Bearer sk-supersecret-123"
    assert "sk-supersecret-123" not in caplog.text


def test_readwrite_cache_serves_repeats_without_transport(tmp_path):
    gw, transport, _ = make_gateway(
        [(200, ok_body("first"))], cache_dir=tmp_path, cache_mode="readwrite"
    )
    assert gw.complete(MESSAGES) == "first"
    assert gw.complete(MESSAGES) == "first"  # from cache, script has no second entry
    assert len(transport.calls) == 1
    assert gw.usage.cache_hits == 1


def test_readonly_cache_miss_is_an_error(tmp_path):
    gw, transport, _ = make_gateway([(200, ok_body())], cache_dir=tmp_path,
                                    cache_mode="readonly")
    with pytest.raises(ConfigurationError, match="cache miss"):
        gw.complete(MESSAGES)
    assert transport.calls == []


def test_readonly_cache_replays_recorded_sessions(tmp_path):
    recorder, _, _ = make_gateway([(200, ok_body("recorded"))],
                                  cache_dir=tmp_path, cache_mode="readwrite")
    recorder.complete(MESSAGES)
    replayer, transport, _ = make_gateway([], cache_dir=tmp_path, cache_mode="readonly")
    assert replayer.complete(MESSAGES) == "recorded"
    assert transport.calls == []


def test_request_hash_keys_on_profile_and_messages():
    base = request_hash(PROFILE, MESSAGES)
    assert base == request_hash(PROFILE, [dict(m) for m in MESSAGES])
    assert base != request_hash(PROFILE, [{"role": "user", "content": "other"}])
    hotter = EndpointProfile(base_url=PROFILE.base_url, model=PROFILE.model,
                             temperature=0.7, credential_env=PROFILE.credential_env)
    assert base != request_hash(hotter, MESSAGES)


def test_profile_validation_and_seed_passthrough():
    with pytest.raises(ValueError):
        EndpointProfile(base_url="u", model="m", temperature=-0.1)
    with pytest.raises(ValueError):
        EndpointProfile(base_url="u", model="m", retries=-1)
    seeded = EndpointProfile(base_url="https://mock.test/v1", model="m", seed=7)
    gw = ChatGateway(seeded, transport=FakeTransport([(200, ok_body())]))
    gw.complete(MESSAGES)
    assert gw.usage.calls == 1


def test_cache_mode_requires_directory():
    with pytest.raises(ValueError):
        ChatGateway(PROFILE, transport=FakeTransport([]), cache_mode="readwrite")
    with pytest.raises(ValueError):
        ChatGateway(PROFILE, transport=FakeTransport([]), cache_mode="sideways")


def test_llm_agent_policy_runs_inside_the_harness():
    from faultline.gateway import agent_policy
    from faultline.harness import BoundAgent, SystemSpec, run
    from faultline.trajectory import AgentId

    gw, transport, _ = make_gateway([(200, ok_body("the answer is 4"))])
    agent = AgentId(0, "Oracle")
    system = SystemSpec(
        name="llm-echo",
        roster=(BoundAgent(agent, agent_policy(gw, "You answer plainly.")),),
        scheduler=lambda t, h: agent,
        stop_condition=lambda h: len(h) >= 1,
        evaluator=lambda answer, truth: 1 if truth in answer else 0,
    )
    t = run(system, "2+2", "4")
    assert t.outcome == 1
    assert t.steps[0].action == "the answer is 4"
    sent = transport.calls[0]["payload"]["messages"]
    assert sent[0]["role"] == "system"
    assert "2+2" in sent[1]["content"]


def test_llm_agent_policy_surfaces_transport_errors():
    from faultline.gateway import agent_policy
    from faultline.harness import BoundAgent, SystemSpec, run
    from faultline.trajectory import AgentId

    gw, _, _ = make_gateway([(500, "x")] * 4)
    agent = AgentId(0, "Oracle")
    system = SystemSpec(
        name="llm-dead",
        roster=(BoundAgent(agent, agent_policy(gw, "sys")),),
        scheduler=lambda t, h: agent,
        stop_condition=lambda h: len(h) >= 1,
        evaluator=lambda answer, truth: 1,
    )
    with pytest.raises(TransportError):
        run(system, "2+2", "4")


def test_all_network_imports_live_in_the_gateway():
    """Every other module must route network activity through this one."""
    import ast
    from pathlib import Path

    import faultline

    network_modules = {"requests", "httpx", "urllib", "http", "socket", "aiohttp"}
    package_dir = Path(faultline.__file__).parent
    for source in package_dir.glob("*.py"):
        if source.name == "gateway.py":
            continue
        tree = ast.parse(source.read_text(encoding="utf-8"))
        for node in ast.walk(tree):
            names = []
            if isinstance(node, ast.Import):
                names = [alias.name for alias in node.names]
            elif isinstance(node, ast.ImportFrom) and node.module:
                names = [node.module]
            for name in names:
                root = name.split(".")[0]
                assert root not in network_modules, f"{source.name} imports {name}"
