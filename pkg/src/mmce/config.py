"""Run configuration.

Config files are TOML; every key is optional::

    [provider]
    base_url = "https://openrouter.ai/api/v1"
    api_key_env = "OPENROUTER_API_KEY"     # name of the variable, never the key

    [models]
    extractors = ["google/gemini-2.0-flash-001", "openai/gpt-4o-mini"]
    judge = "google/gemini-2.5-flash-lite"

    [vision]
    endpoint = "https://<resource>.cognitiveservices.azure.com"
    api_key_env = "VISION_KEY"

    [run]
    shots = 5
    image_budget = 30          # 0 disables the cap
    workers = 4
    cache_dir = ".mmce-cache"
    mode = "replay"            # or "live"

Command-line flags override the file, the file overrides these defaults.
"""
from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .extraction import DEFAULT_IMAGE_BUDGET, DEFAULT_SHOTS
from .gateway import Backend, OpenRouterTransport
from .vision import AzureVisionTransport, VisionClient


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    base_url: str = "https://openrouter.ai/api/v1"
    api_key_env: str = "OPENROUTER_API_KEY"
    extractors: tuple[str, ...] = (
        "google/gemini-2.0-flash-001",
        "qwen/qwen2.5-vl-32b-instruct",
        "openai/gpt-4o-mini",
    )
    judge: str = "google/gemini-2.5-flash-lite"
    vision_endpoint: str = ""
    vision_key_env: str = "VISION_KEY"
    shots: int = DEFAULT_SHOTS
    image_budget: Optional[int] = DEFAULT_IMAGE_BUDGET
    workers: int = 4
    cache_dir: Path = Path(".mmce-cache")
    mode: str = "replay"

    def __post_init__(self):
        if self.mode not in ("live", "replay"):
            raise ConfigError(f"mode must be 'live' or 'replay', got {self.mode!r}")
        if self.shots < 0:
            raise ConfigError("shots must be >= 0")
        if self.image_budget is not None and self.image_budget <= 0:
            object.__setattr__(self, "image_budget", None)
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        object.__setattr__(self, "cache_dir", Path(self.cache_dir))
        object.__setattr__(self, "extractors", tuple(self.extractors))

    def override(self, **values) -> "Config":
        return dataclasses.replace(self, **{k: v for k, v in values.items() if v is not None})

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["cache_dir"] = self.cache_dir.as_posix()
        d["extractors"] = list(self.extractors)
        return d


_KEYS = {
    ("provider", "base_url"): "base_url",
    ("provider", "api_key_env"): "api_key_env",
    ("models", "extractors"): "extractors",
    ("models", "judge"): "judge",
    ("vision", "endpoint"): "vision_endpoint",
    ("vision", "api_key_env"): "vision_key_env",
    ("run", "shots"): "shots",
    ("run", "image_budget"): "image_budget",
    ("run", "workers"): "workers",
    ("run", "cache_dir"): "cache_dir",
    ("run", "mode"): "mode",
}


def load_config(path=None) -> Config:
    if path is None:
        return Config()
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    values = {}
    for section, table in raw.items():
        if not isinstance(table, dict):
            raise ConfigError(f"{path}: top-level key {section!r} must be a [section]")
        for key, value in table.items():
            if (section, key) not in _KEYS:
                raise ConfigError(f"{path}: unknown key {section}.{key}")
            values[_KEYS[section, key]] = value
    if "cache_dir" in values and not Path(values["cache_dir"]).is_absolute():
        values["cache_dir"] = Path(path).parent / values["cache_dir"]
    try:
        return Config(**values)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _secret(env_name: str) -> str:
    value = os.environ.get(env_name, "")
    if not value:
        raise ConfigError(f"live mode needs the environment variable {env_name}")
    return value


def make_backend(config: Config) -> Backend:
    if config.mode == "replay":
        return Backend(config.cache_dir, "replay")
    transport = OpenRouterTransport(config.base_url, _secret(config.api_key_env))
    return Backend(config.cache_dir, "live", transport)


def make_vision(config: Config) -> VisionClient:
    if config.mode == "replay":
        return VisionClient(config.cache_dir, "replay")
    if not config.vision_endpoint:
        raise ConfigError("live mode needs vision.endpoint for the MICE vision stage")
    transport = AzureVisionTransport(config.vision_endpoint, _secret(config.vision_key_env))
    return VisionClient(config.cache_dir, "live", transport)
