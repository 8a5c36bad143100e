"""Application configuration: TOML file plus environment overrides.

Example ``geneus.toml``::

    output_dir = "runs"
    default_runs = 10
    duplicate_threshold = 0.9

    [provider]
    kind = "http"
    base_url = "https://api.openai.com/v1"
    model_id = "gpt-4-1106-preview"

API keys never live in the file: ``provider.api_key_ref`` names the
environment variable to read (``GENEUS_API_KEY`` by default).
``GENEUS_BASE_URL`` and ``GENEUS_MODEL`` override the file.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .promptkit import DEFAULT_TEMPERATURE
from .provider import ProviderConfig, ProviderKind
from .quality import DEFAULT_ACTORS

ENV_BASE_URL = "GENEUS_BASE_URL"
ENV_MODEL = "GENEUS_MODEL"


@dataclass(frozen=True)
class AppConfig:
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    templates_dir: Path | None = None
    output_dir: Path = Path("runs")
    default_runs: int = 10
    duplicate_threshold: float = 0.9
    chunk_max_chars: int | None = 24_000
    temperature: float = DEFAULT_TEMPERATURE
    seed: int | None = None
    actors: tuple[str, ...] = DEFAULT_ACTORS
    max_request_bytes: int = 1 << 20

    def validate(self) -> "AppConfig":
        if self.default_runs < 2:
            raise ConfigError("default_runs must be at least 2")
        if not 0.0 < self.duplicate_threshold <= 1.0:
            raise ConfigError("duplicate_threshold must be in (0, 1]")
        if self.chunk_max_chars is not None and self.chunk_max_chars < 256:
            raise ConfigError("chunk_max_chars must be at least 256")
        if not 0.0 <= self.temperature <= 2.0:
            raise ConfigError("temperature must be in [0, 2]")
        if self.templates_dir is not None and not Path(self.templates_dir).is_dir():
            raise ConfigError(f"templates_dir does not exist: {self.templates_dir}")
        out = Path(self.output_dir)
        if out.exists() and not out.is_dir():
            raise ConfigError(f"output_dir is not a directory: {out}")
        return self


_PROVIDER_FIELDS = {f.name for f in fields(ProviderConfig)}
_APP_FIELDS = {f.name for f in fields(AppConfig)} - {"provider"}


def _provider_from(table: Mapping[str, Any], base: ProviderConfig) -> ProviderConfig:
    unknown = set(table) - _PROVIDER_FIELDS
    if unknown:
        raise ConfigError(f"unknown provider settings: {', '.join(sorted(unknown))}")
    if "api_key" in table:
        raise ConfigError("put API keys in the environment and reference them with api_key_ref")
    return replace(base, **table)


def load_config(path: str | Path | None = None, env: Mapping[str, str] | None = None) -> AppConfig:
    env = os.environ if env is None else env
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    provider_table = dict(data.pop("provider", {}) or {})
    unknown = set(data) - _APP_FIELDS
    if unknown:
        raise ConfigError(f"unknown settings: {', '.join(sorted(unknown))}")
    if env.get(ENV_BASE_URL):
        provider_table["base_url"] = env[ENV_BASE_URL]
    if env.get(ENV_MODEL):
        provider_table["model_id"] = env[ENV_MODEL]
    provider = _provider_from(provider_table, ProviderConfig())
    for key in ("templates_dir", "output_dir"):
        if data.get(key) is not None:
            data[key] = Path(data[key])
    if "actors" in data:
        data["actors"] = tuple(data["actors"])
    return AppConfig(provider=provider, **data).validate()


def with_provider(config: AppConfig, **changes: Any) -> AppConfig:
    changes = {k: v for k, v in changes.items() if v is not None}
    if "kind" in changes:
        changes["kind"] = ProviderKind(changes["kind"])
    return replace(config, provider=replace(config.provider, **changes))
