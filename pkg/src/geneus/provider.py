"""Model backends.

``HttpProvider`` speaks the OpenAI-compatible chat-completions protocol.
``ReplayProvider`` answers from a fixture file keyed by request digest and
``RecordProvider`` writes such fixtures while delegating to another backend.
``MockProvider`` produces seed-deterministic filler text, and
``CallbackProvider`` wraps a plain function for scripted tests.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterator

import httpx

from .errors import ConfigError, FixtureMiss, ProviderError
from .promptkit import DEFAULT_MODEL, Completion, ModelRequest

log = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "GENEUS_API_KEY"
BACKOFF_BASE = 0.5
BACKOFF_FACTOR = 2.0
BACKOFF_CAP = 8.0
RETRYABLE_STATUS = frozenset({408, 409, 425, 429}) | frozenset(range(500, 600))


class ProviderKind(str, enum.Enum):
    HTTP = "http"
    REPLAY = "replay"
    RECORD = "record"
    MOCK = "mock"


@dataclass(frozen=True)
class ProviderConfig:
    kind: ProviderKind = ProviderKind.HTTP
    model_id: str = DEFAULT_MODEL
    base_url: str | None = None
    api_key_ref: str = DEFAULT_API_KEY_ENV
    timeout: float = 60.0
    max_retries: int = 3
    fixture_path: Path | None = None
    seed: int | None = None
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ProviderKind(self.kind))
        if self.fixture_path is not None:
            object.__setattr__(self, "fixture_path", Path(self.fixture_path))

    def validate(self) -> "ProviderConfig":
        if self.kind in (ProviderKind.HTTP, ProviderKind.RECORD):
            if not self.base_url:
                raise ConfigError(f"{self.kind.value} provider needs base_url")
            if not self.api_key_ref:
                raise ConfigError(f"{self.kind.value} provider needs api_key_ref")
        if self.kind is ProviderKind.REPLAY:
            if self.fixture_path is None or not self.fixture_path.is_file():
                raise ConfigError(f"replay fixture not found: {self.fixture_path}")
        if self.kind is ProviderKind.RECORD and self.fixture_path is None:
            raise ConfigError("record provider needs fixture_path")
        if self.max_retries < 0 or self.max_in_flight < 1 or self.timeout <= 0:
            raise ConfigError("max_retries >= 0, max_in_flight >= 1 and timeout > 0 required")
        return self


def normalize_digest(request: ModelRequest) -> str:
    """Hash of the parts of a request that determine the answer.

    Covers model id, ordered roles and contents, and temperature at two
    decimals. Seed and max_output are deliberately left out.
    """
    canonical = {
        "model": request.model_id,
        "messages": [[m.role, m.content] for m in request.messages],
        "temperature": f"{request.temperature:.2f}",
    }
    blob = json.dumps(canonical, ensure_ascii=False, separators=(",", ":"), sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# fixtures


@dataclass(frozen=True)
class FixtureEntry:
    digest: str
    response_text: str
    finish_reason: str = "stop"

    def to_dict(self) -> dict[str, str]:
        return {"digest": self.digest, "response_text": self.response_text, "finish_reason": self.finish_reason}


class Fixture:
    """Ordered, digest-unique request/response store backed by a JSON file."""

    def __init__(self, entries: list[FixtureEntry] | None = None, path: Path | None = None):
        self._entries: dict[str, FixtureEntry] = {}
        self.path = path
        self._lock = threading.Lock()
        for entry in entries or []:
            if entry.digest in self._entries:
                raise ValueError(f"duplicate digest in fixture: {entry.digest}")
            self._entries[entry.digest] = entry

    @classmethod
    def load(cls, path: str | Path) -> "Fixture":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
            if not isinstance(raw, list):
                raise ValueError("fixture must be a JSON array")
            entries = [FixtureEntry(r["digest"], r["response_text"], r.get("finish_reason", "stop")) for r in raw]
            return cls(entries, path)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"unusable fixture {path}: {exc}") from exc

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[FixtureEntry]:
        return iter(list(self._entries.values()))

    def __contains__(self, digest: str) -> bool:
        return digest in self._entries

    def lookup(self, digest: str) -> FixtureEntry:
        try:
            return self._entries[digest]
        except KeyError:
            raise FixtureMiss(digest) from None

    def add(self, entry: FixtureEntry) -> None:
        with self._lock:
            # a re-recorded request replaces the older answer in place
            self._entries[entry.digest] = entry
            if self.path is not None:
                self._write_locked(self.path)

    def save(self, path: str | Path | None = None) -> None:
        with self._lock:
            self._write_locked(Path(path) if path is not None else self.path)

    def _write_locked(self, path: Path | None) -> None:
        if path is None:
            raise ValueError("fixture has no path to save to")
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        body = json.dumps([e.to_dict() for e in self._entries.values()], indent=2, ensure_ascii=False)
        tmp.write_text(body + "\n", encoding="utf-8")
        os.replace(tmp, path)


# providers


class HttpProvider:
    """Chat-completions client with bounded retries and full-jitter backoff."""

    def __init__(
        self,
        config: ProviderConfig,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout)
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self.attempts = 0

    def _api_key(self) -> str:
        key = os.environ.get(self.config.api_key_ref, "").strip()
        if not key:
            raise ProviderError(f"environment variable {self.config.api_key_ref} is not set", retryable=False)
        return key

    def backoff(self, attempt: int) -> float:
        return self._rng.uniform(0.0, min(BACKOFF_CAP, BACKOFF_BASE * BACKOFF_FACTOR**attempt))

    def complete(self, request: ModelRequest) -> Completion:
        url = (self.config.base_url or "").rstrip("/") + "/chat/completions"
        body: dict[str, Any] = {
            "model": request.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output,
        }
        if request.seed is not None:
            body["seed"] = request.seed
        headers = {"Authorization": f"Bearer {self._api_key()}"}
        last: ProviderError | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(self.backoff(attempt - 1))
            try:
                with self._slots:
                    self.attempts += 1
                    response = self._client.post(url, json=body, headers=headers, timeout=self.config.timeout)
            except httpx.TimeoutException as exc:
                last = ProviderError(f"timeout calling {url}: {exc}", retryable=True)
            except httpx.TransportError as exc:
                last = ProviderError(f"transport error calling {url}: {exc}", retryable=True)
            else:
                if response.status_code == 200:
                    return _parse_chat_response(response)
                retryable = response.status_code in RETRYABLE_STATUS
                last = ProviderError(
                    f"HTTP {response.status_code} from {url}: {response.text[:300]}",
                    retryable=retryable,
                    status=response.status_code,
                )
            if not last.retryable:
                raise last
            log.warning("attempt %d failed: %s", attempt + 1, last.detail)
        assert last is not None
        raise last

    def close(self) -> None:
        self._client.close()


def _parse_chat_response(response: httpx.Response) -> Completion:
    try:
        payload = response.json()
        choice = payload["choices"][0]
        text = choice["message"]["content"] or ""
        reason = choice.get("finish_reason") or "stop"
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProviderError(f"unexpected chat-completions response: {exc}", retryable=False) from exc
    finish = reason if reason in ("stop", "length") else "error"
    usage = payload.get("usage")
    if isinstance(usage, dict):
        usage = {k: v for k, v in usage.items() if isinstance(v, int)}
    else:
        usage = None
    return Completion(text, finish, usage)


class ReplayProvider:
    def __init__(self, fixture: Fixture):
        self.fixture = fixture

    @classmethod
    def from_path(cls, path: str | Path) -> "ReplayProvider":
        return cls(Fixture.load(path))

    def complete(self, request: ModelRequest) -> Completion:
        entry = self.fixture.lookup(normalize_digest(request))
        return Completion(entry.response_text, entry.finish_reason)


class RecordProvider:
    """Delegate to ``inner`` and append every answer to a fixture file."""

    def __init__(self, inner: Any, fixture: Fixture):
        self.inner = inner
        self.fixture = fixture

    def complete(self, request: ModelRequest) -> Completion:
        completion = self.inner.complete(request)
        finish = completion.finish_reason if completion.finish_reason != "error" else "stop"
        self.fixture.add(FixtureEntry(normalize_digest(request), completion.text, finish))
        return completion


_MOCK_WORDS = (
    "system user record patient report data access secure store update view create delete "
    "monitor alert schedule log audit backup sync export import validate notify search filter "
    "clinic staff manager request response network database session account role permission"
).split()


class MockProvider:
    """Pseudo-random text that depends only on (seed, request digest)."""

    def __init__(self, seed: int | None = 0, words: int = 24):
        self.seed = seed
        self.words = words

    def complete(self, request: ModelRequest) -> Completion:
        seed = request.seed if request.seed is not None else self.seed
        rng = random.Random(f"{seed}:{normalize_digest(request)}")
        sentence = " ".join(rng.choice(_MOCK_WORDS) for _ in range(self.words))
        return Completion(sentence.capitalize() + ".", "stop")


class CallbackProvider:
    """Answer each request with ``respond(request)``, which returns a str or Completion."""

    def __init__(self, respond: Callable[[ModelRequest], str | Completion]):
        self.respond = respond

    def complete(self, request: ModelRequest) -> Completion:
        out = self.respond(request)
        return out if isinstance(out, Completion) else Completion(out)


def echo_provider() -> CallbackProvider:
    """Replies with the last message's content verbatim."""
    return CallbackProvider(lambda request: request.messages[-1].content)


def build_provider(config: ProviderConfig, client: httpx.Client | None = None) -> Any:
    config.validate()
    if config.kind is ProviderKind.HTTP:
        return HttpProvider(config, client)
    if config.kind is ProviderKind.REPLAY:
        return ReplayProvider.from_path(config.fixture_path)  # type: ignore[arg-type]
    if config.kind is ProviderKind.RECORD:
        path = config.fixture_path
        assert path is not None
        fixture = Fixture.load(path) if path.is_file() else Fixture(path=path)
        return RecordProvider(HttpProvider(config, client), fixture)
    return MockProvider(config.seed)


def complete(config: ProviderConfig, request: ModelRequest) -> Completion:
    """One-shot convenience: build the configured backend and issue one request."""
    return build_provider(config).complete(request)
