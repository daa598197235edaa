"""Service and pipeline configuration.

One JSON document, strictly validated: unknown keys are rejected by name, so
typos never silently fall back to defaults. The env vars VSA_CHAT_URL,
VSA_CHAT_KEY, and VSA_DETECTOR_URL supply endpoint defaults; values in the
config file override them.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .chain import ChainConfig
from .gateway import GatewayConfig
from .model import QueryMode
from .retrieval import RetrievalConfig

ENV_CHAT_URL = "VSA_CHAT_URL"
ENV_CHAT_KEY = "VSA_CHAT_KEY"
ENV_DETECTOR_URL = "VSA_DETECTOR_URL"


class ConfigError(ValueError):
    pass


@dataclass
class ServiceConfig:
    listen_host: str = "127.0.0.1"
    listen_port: int = 8765
    chat_url: str = ""
    chat_key: str = ""
    chat_model: str = "llava-1.6-7b"
    detector_url: str = ""
    search_endpoint: str = ""
    search_key: str = ""
    fixtures_dir: str = ""
    trace_dir: str = "traces"
    template_dir: str = ""
    default_mode: str = QueryMode.FULL.value
    max_image_bytes: int = 10 * 1024 * 1024
    query_parallelism: int = 2
    include_all_levels: bool = False
    chain: ChainConfig = field(default_factory=ChainConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)


def _apply_section(target, data: dict, section: str) -> None:
    fields = {f.name for f in dataclasses.fields(target)}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {section}.{key}" if section else f"unknown config key {key}")
        setattr(target, key, value)


def load_config(path: Path | None = None) -> ServiceConfig:
    """Load, env-default, and validate the service configuration."""
    config = ServiceConfig()
    config.chat_url = os.environ.get(ENV_CHAT_URL, config.chat_url)
    config.chat_key = os.environ.get(ENV_CHAT_KEY, config.chat_key)
    config.detector_url = os.environ.get(ENV_DETECTOR_URL, config.detector_url)

    if path is not None:
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        nested = {"chain": ChainConfig, "retrieval": RetrievalConfig, "gateway": GatewayConfig}
        for key, value in data.items():
            if key in nested:
                if not isinstance(value, dict):
                    raise ConfigError(f"config key {key} must be an object")
                section = nested[key]()
                _apply_section(section, value, key)
                setattr(config, key, section)
            else:
                _apply_section(config, {key: value}, "")

    validate_config(config)
    return config


def validate_config(config: ServiceConfig) -> None:
    if config.default_mode not in {m.value for m in QueryMode}:
        raise ConfigError(f"invalid value for default_mode: {config.default_mode!r}")
    if config.max_image_bytes < 1:
        raise ConfigError("invalid value for max_image_bytes: must be positive")
    if config.query_parallelism < 1:
        raise ConfigError("invalid value for query_parallelism: must be positive")
    # Re-run the dataclass validators for sections loaded from plain dicts.
    ChainConfig(**dataclasses.asdict(config.chain))
    if config.retrieval.top_k < 1:
        raise ConfigError("invalid value for retrieval.top_k: must be positive")
    if config.fixtures_dir and not Path(config.fixtures_dir).is_dir():
        raise ConfigError(f"fixtures_dir does not exist: {config.fixtures_dir}")
    if config.template_dir and not Path(config.template_dir).is_dir():
        raise ConfigError(f"template_dir does not exist: {config.template_dir}")


def ensure_trace_dir(config: ServiceConfig) -> Path:
    """Create the trace directory and prove it is writable."""
    trace_dir = Path(config.trace_dir)
    try:
        trace_dir.mkdir(parents=True, exist_ok=True)
        probe = trace_dir / ".writable"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"trace_dir is not writable: {trace_dir} ({exc})") from exc
    return trace_dir
