"""Runtime configuration: TOML file, env vars, and flag overrides.

Precedence is flags > environment > config file > defaults.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backend import Backend, HTTPBackend, ScriptedBackend

ENV_PREFIX = "DECKAGENT_"
ENV_KEYS = {
    "api_base": "DECKAGENT_API_BASE",
    "api_key": "DECKAGENT_API_KEY",
    "chat_model": "DECKAGENT_CHAT_MODEL",
    "embed_model": "DECKAGENT_EMBED_MODEL",
}


class ConfigError(Exception):
    pass


@dataclass
class BackendConfig:
    kind: str = "http"  # "http" or "scripted"
    api_base: str = ""
    api_key: str = ""
    chat_model: str = ""
    embed_model: str = ""
    script: str = ""
    max_inflight: int = 4


@dataclass
class RetrievalConfig:
    retriever: str = "bm25"  # "bm25" or "dense"
    index_mode: str = "knowledge"  # "knowledge" or "ocr"
    k_pages: int = 3
    k_elements: int = 5
    bm25_k1: float = 1.5
    bm25_b: float = 0.75
    tau: float = 15.0
    subquery_cap: int = 5


@dataclass
class PathsConfig:
    docs_dir: str = ""
    kb_dir: str = ""
    reports_dir: str = ""


@dataclass
class Config:
    backend: BackendConfig = field(default_factory=BackendConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0

    def validate(self) -> None:
        if self.retrieval.tau < 0:
            raise ConfigError("tau must be >= 0")
        if self.retrieval.k_pages < 1 or self.retrieval.k_elements < 1:
            raise ConfigError("k values must be >= 1")
        for name in ("docs_dir", "kb_dir", "reports_dir"):
            value = getattr(self.paths, name)
            if value and not Path(value).parent.exists():
                raise ConfigError(f"paths.{name} is not resolvable: {value}")


def _apply_section(section, data: dict) -> None:
    names = {f.name for f in fields(section)}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(section, key, type(getattr(section, key))(value))


def load_config(
    path: str | Path | None = None,
    environ=os.environ,
    overrides: dict | None = None,
) -> Config:
    """Build a Config with flags > env > file precedence.

    ``overrides`` is a flat dict of "section.key" -> value (Nones skipped),
    as collected from CLI flags.
    """
    cfg = Config()
    if path is not None:
        try:
            data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML ({exc})") from exc
        for section_name in ("backend", "retrieval", "paths"):
            if section_name in data:
                _apply_section(getattr(cfg, section_name), data[section_name])
        if "seed" in data:
            cfg.seed = int(data["seed"])

    for key, env_name in ENV_KEYS.items():
        if environ.get(env_name):
            setattr(cfg.backend, key, environ[env_name])

    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section_name, key = dotted.split(".", 1)
        section = getattr(cfg, section_name)
        setattr(section, key, type(getattr(section, key))(value))

    cfg.validate()
    return cfg


def make_backend(cfg: Config) -> Backend:
    """Instantiate the configured backend; a script path implies scripted."""
    if cfg.backend.script or cfg.backend.kind == "scripted":
        if not cfg.backend.script:
            raise ConfigError("scripted backend needs backend.script")
        return ScriptedBackend.from_file(cfg.backend.script)
    return HTTPBackend(
        base_url=cfg.backend.api_base,
        api_key=cfg.backend.api_key,
        chat_model=cfg.backend.chat_model,
        embed_model=cfg.backend.embed_model,
        max_inflight=cfg.backend.max_inflight,
    )
