"""Gateway configuration: listen address, model identifiers, limits."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

ENDPOINT_KEYS = ("ve", "vg", "segment", "llm")


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class Limits:
    max_tokens: int = 512
    max_pixels: int = 16_777_216

    def __post_init__(self) -> None:
        if self.max_tokens < 1 or self.max_pixels < 1:
            raise ConfigError("limits must be positive")


@dataclass(frozen=True)
class GatewayConfig:
    """Model choice is configuration, not code; unset endpoints stay disabled."""

    host: str = "127.0.0.1"
    port: int = 8008
    device: str = "cpu"
    models: Mapping[str, str] = field(default_factory=dict)
    limits: Limits = field(default_factory=Limits)

    def __post_init__(self) -> None:
        for endpoint, identifier in self.models.items():
            if endpoint not in ENDPOINT_KEYS:
                raise ConfigError(f"unknown endpoint {endpoint!r}; expected one of {ENDPOINT_KEYS}")
            if not identifier or not isinstance(identifier, str):
                raise ConfigError(f"endpoint {endpoint!r} needs a non-empty model identifier")

    def enabled(self, endpoint: str) -> bool:
        return endpoint in self.models

    @classmethod
    def from_obj(cls, obj: Mapping) -> "GatewayConfig":
        if not isinstance(obj, Mapping):
            raise ConfigError("config must be a JSON object")
        limits = obj.get("limits", {})
        if not isinstance(limits, Mapping):
            raise ConfigError("limits must be an object")
        return cls(
            host=obj.get("host", "127.0.0.1"),
            port=int(obj.get("port", 8008)),
            device=obj.get("device", "cpu"),
            models=dict(obj.get("models", {})),
            limits=Limits(
                max_tokens=int(limits.get("max_tokens", 512)),
                max_pixels=int(limits.get("max_pixels", 16_777_216)),
            ),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "GatewayConfig":
        try:
            return cls.from_obj(json.loads(Path(path).read_text(encoding="utf-8")))
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
