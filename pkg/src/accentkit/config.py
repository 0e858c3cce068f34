"""JSON run configuration.

Example::

    {
      "mel": {"n_mels": 80, "fft_size": 1024, "hop": 256, "fmin": 0, "fmax": 8000},
      "tracker": {"voicing_threshold": 0.3},
      "backend": {"kind": "chat", "base_url": "https://api.example.com/v1",
                  "model": "some-model", "api_key_env": "EDITOR_API_KEY",
                  "temperature": 0},
      "max_retries": 3,
      "workers": 4,
      "master_seed": 0
    }
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from typing import Optional

from .llmedit import DEFAULT_RETRIES, ChatBackend, MockBackend
from .prosody import MelConfig, TrackerConfig


class ConfigFileError(ValueError):
    pass


@dataclass
class Config:
    mel: MelConfig = field(default_factory=MelConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    backend: dict = field(default_factory=lambda: {"kind": "mock", "rules": [["W", "V"]],
                                                   "cap_rate": 1.0})
    max_retries: int = DEFAULT_RETRIES
    workers: int = 4
    master_seed: int = 0
    accent_label: str = "target-accent English"

    def make_backend(self):
        b = dict(self.backend)
        kind = b.pop("kind", "mock")
        if kind == "mock":
            return MockBackend([tuple(r) for r in b.get("rules", [])], b.get("cap_rate", 1.0))
        if kind == "chat":
            try:
                return ChatBackend(b["base_url"], b["model"],
                                   api_key_env=b.get("api_key_env", "OPENAI_API_KEY"),
                                   temperature=b.get("temperature", 0.0),
                                   timeout=b.get("timeout", 60.0),
                                   transport_retries=b.get("transport_retries", 2))
            except KeyError as exc:
                raise ConfigFileError(f"chat backend needs {exc.args[0]!r}") from None
        raise ConfigFileError(f"unknown backend kind {kind!r}")


def _sub(cls, raw, name):
    if raw is None:
        return cls()
    allowed = {f.name for f in fields(cls)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigFileError(f"unknown {name} keys: {sorted(unknown)}")
    return cls(**raw)


def load_config(path: Optional[str]) -> Config:
    if path is None:
        return Config()
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigFileError(f"{path}: {exc}") from None
    allowed = {f.name for f in fields(Config)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigFileError(f"{path}: unknown keys {sorted(unknown)}")
    cfg = Config(mel=_sub(MelConfig, raw.get("mel"), "mel"),
                 tracker=_sub(TrackerConfig, raw.get("tracker"), "tracker"))
    for key in ("backend", "max_retries", "workers", "master_seed", "accent_label"):
        if key in raw:
            setattr(cfg, key, raw[key])
    return cfg
