import hashlib
import json
import random
import threading

import httpx
import pytest

from geneus.errors import ConfigError, FixtureMiss, ProviderError
from geneus.promptkit import Completion, GenerationParams, Message, ModelRequest, run_rat
from geneus.provider import (
    BACKOFF_CAP,
    CallbackProvider,
    Fixture,
    FixtureEntry,
    HttpProvider,
    MockProvider,
    ProviderConfig,
    ProviderKind,
    RecordProvider,
    ReplayProvider,
    build_provider,
    complete,
    normalize_digest,
)


def req(content="hello", **kw):
    return ModelRequest((Message("system", "sys"), Message("user", content)), **kw)


def chat_body(text, reason="stop"):
    return {"choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": reason}],
            "usage": {"prompt_tokens": 3, "completion_tokens": 2}}


def http_provider(handler, max_retries=3, env_key=True, monkeypatch=None):
    if monkeypatch is not None and env_key:
        monkeypatch.setenv("GENEUS_API_KEY", "sk-test")
    config = ProviderConfig(kind="http", base_url="https://llm.example/v1", max_retries=max_retries)
    client = httpx.Client(transport=httpx.MockTransport(handler))
    sleeps = []
    return HttpProvider(config, client, sleep=sleeps.append, rng=random.Random(0)), sleeps


# digest


def test_digest_ignores_max_output_and_seed():
    assert normalize_digest(req(max_output=10)) == normalize_digest(req(max_output=999))
    assert normalize_digest(req(seed=1)) == normalize_digest(req(seed=2))


def test_digest_rounds_temperature_to_two_decimals():
    assert normalize_digest(req(temperature=0.2)) == normalize_digest(req(temperature=0.2000001))
    assert normalize_digest(req(temperature=0.2)) != normalize_digest(req(temperature=0.3))


def test_digest_matches_independent_recomputation():
    a, b = req("hello"), req("hellp")
    for r in (a, b):
        canonical = json.dumps(
            {"messages": [[m.role, m.content] for m in r.messages], "model": r.model_id, "temperature": "0.20"},
            separators=(",", ":"),
        )
        assert normalize_digest(r) == hashlib.sha256(canonical.encode()).hexdigest()
    assert normalize_digest(a) != normalize_digest(b)
    assert normalize_digest(req()) == normalize_digest(req())


# fixtures, replay, record


def test_replay_lookup_and_miss():
    r = req()
    provider = ReplayProvider(Fixture([FixtureEntry(normalize_digest(r), "R")]))
    assert provider.complete(r) == Completion("R", "stop")
    with pytest.raises(FixtureMiss) as info:
        provider.complete(req("other"))
    assert info.value.digest == normalize_digest(req("other"))


def test_fixture_digests_unique(tmp_path):
    path = tmp_path / "f.json"
    path.write_text(json.dumps([{"digest": "d", "response_text": "a"}, {"digest": "d", "response_text": "b"}]))
    with pytest.raises(ConfigError):
        Fixture.load(path)


def test_record_then_replay_is_byte_identical(tmp_path):
    path = tmp_path / "rec.json"
    recorder = RecordProvider(MockProvider(seed=3), Fixture(path=path))
    _, trace_a = run_rat(recorder, "doc text", "Think.")
    _, trace_b = run_rat(ReplayProvider.from_path(path), "doc text", "Think.")
    assert json.dumps(trace_a.to_dict()) == json.dumps(trace_b.to_dict())
    on_disk = json.loads(path.read_text(encoding="utf-8"))
    assert {"digest", "response_text", "finish_reason"} <= set(on_disk[0])


def test_concurrent_record_appends_all_land(tmp_path):
    path = tmp_path / "rec.json"
    recorder = RecordProvider(CallbackProvider(lambda r: r.messages[1].content.upper()), Fixture(path=path))
    threads = [threading.Thread(target=recorder.complete, args=(req(f"m{i}"),)) for i in range(32)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(Fixture.load(path)) == 32


def test_mock_is_seed_deterministic():
    assert MockProvider(7).complete(req()) == MockProvider(7).complete(req())
    assert MockProvider(7).complete(req()) != MockProvider(8).complete(req())


# http


def test_http_success_and_wire_format(monkeypatch):
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json=chat_body("hi"))

    provider, _ = http_provider(handler, monkeypatch=monkeypatch)
    out = provider.complete(req(seed=5))
    assert out.text == "hi" and out.finish_reason == "stop" and out.usage["prompt_tokens"] == 3
    assert seen["url"] == "https://llm.example/v1/chat/completions"
    assert seen["auth"] == "Bearer sk-test"
    assert seen["body"]["messages"][1] == {"role": "user", "content": "hello"}
    assert seen["body"]["seed"] == 5 and seen["body"]["temperature"] == 0.2


def test_http_retries_transient_then_succeeds(monkeypatch):
    statuses = iter([429, 503])

    def handler(request):
        code = next(statuses, 200)
        return httpx.Response(code, json=chat_body("ok") if code == 200 else {"error": "x"})

    provider, sleeps = http_provider(handler, monkeypatch=monkeypatch)
    assert provider.complete(req()).text == "ok"
    assert provider.attempts == 3 and len(sleeps) == 2


def test_http_retry_bound(monkeypatch):
    provider, sleeps = http_provider(lambda r: httpx.Response(500), max_retries=2, monkeypatch=monkeypatch)
    with pytest.raises(ProviderError) as info:
        provider.complete(req())
    assert info.value.retryable and info.value.status == 500
    assert provider.attempts == 3 and len(sleeps) == 2


@pytest.mark.parametrize("status", [400, 401])
def test_http_non_retryable_attempts_once(monkeypatch, status):
    provider, sleeps = http_provider(lambda r: httpx.Response(status), monkeypatch=monkeypatch)
    with pytest.raises(ProviderError) as info:
        provider.complete(req())
    assert not info.value.retryable
    assert provider.attempts == 1 and sleeps == []


def test_http_timeouts_are_retried(monkeypatch):
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    provider, _ = http_provider(handler, max_retries=1, monkeypatch=monkeypatch)
    with pytest.raises(ProviderError, match="timeout"):
        provider.complete(req())
    assert provider.attempts == 2


def test_http_length_finish_and_bad_payload(monkeypatch):
    provider, _ = http_provider(lambda r: httpx.Response(200, json=chat_body("cut", "length")), monkeypatch=monkeypatch)
    assert provider.complete(req()).truncated
    provider, _ = http_provider(lambda r: httpx.Response(200, json={"nope": 1}), monkeypatch=monkeypatch)
    with pytest.raises(ProviderError):
        provider.complete(req())


def test_http_requires_key_in_environment(monkeypatch):
    monkeypatch.delenv("GENEUS_API_KEY", raising=False)
    provider, _ = http_provider(lambda r: httpx.Response(200, json=chat_body("x")), env_key=False)
    with pytest.raises(ProviderError, match="GENEUS_API_KEY"):
        provider.complete(req())
    assert provider.attempts == 0


def test_backoff_full_jitter_bounds():
    provider = HttpProvider(ProviderConfig(base_url="http://x"), httpx.Client(), rng=random.Random(1))
    for attempt in range(10):
        ceiling = min(BACKOFF_CAP, 0.5 * 2**attempt)
        for _ in range(50):
            assert 0.0 <= provider.backoff(attempt) <= ceiling


def test_in_flight_bound(monkeypatch):
    monkeypatch.setenv("GENEUS_API_KEY", "k")
    lock = threading.Lock()
    state = {"now": 0, "peak": 0}
    gate = threading.Event()

    def handler(request):
        with lock:
            state["now"] += 1
            state["peak"] = max(state["peak"], state["now"])
        gate.wait(0.05)
        with lock:
            state["now"] -= 1
        return httpx.Response(200, json=chat_body("x"))

    config = ProviderConfig(base_url="http://x", max_in_flight=2)
    provider = HttpProvider(config, httpx.Client(transport=httpx.MockTransport(handler)))
    threads = [threading.Thread(target=provider.complete, args=(req(),)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert state["peak"] <= 2


# config and dispatch


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        ProviderConfig(kind="http").validate()
    with pytest.raises(ConfigError):
        ProviderConfig(kind="replay", fixture_path=tmp_path / "none.json").validate()
    with pytest.raises(ConfigError):
        ProviderConfig(kind="record", base_url="http://x").validate()
    assert ProviderConfig(kind="mock").validate().kind is ProviderKind.MOCK


def test_module_level_complete_dispatches(tmp_path):
    r = req("x")
    path = tmp_path / "f.json"
    Fixture([FixtureEntry(normalize_digest(r), "from fixture")]).save(path)
    assert complete(ProviderConfig(kind="replay", fixture_path=path), r).text == "from fixture"
    assert complete(ProviderConfig(kind="mock", seed=1), r) == MockProvider(1).complete(r)
    assert isinstance(build_provider(ProviderConfig(kind="record", base_url="http://x", fixture_path=path)),
                      RecordProvider)


def test_generation_params_encode_system_and_user():
    r = GenerationParams().request("I", "X")
    assert [(m.role, m.content) for m in r.messages] == [("system", "I"), ("user", "X")]
