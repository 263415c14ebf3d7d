"""Pipeline configuration loaded from TOML or JSON."""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .filtering import FilterConfig
from .sampler import SamplerConfig


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    path: str = ""
    granularity: int | None = None


@dataclass
class RulesConfig:
    top_k: int = 20
    min_support: int = 3


@dataclass
class GatewayConfig:
    kind: str = "stub"
    url: str = "http://127.0.0.1:8000"
    embed_url: str | None = None
    timeout: float = 30.0
    retries: int = 3
    max_in_flight: int = 8
    dim: int = 768
    cache_path: str | None = None
    stub_seed: int = 0
    stub_extra: str = "vocab"

    def __post_init__(self):
        if self.kind not in ("stub", "http"):
            raise ConfigError(f"gateway.kind must be 'stub' or 'http', got {self.kind!r}")
        if self.stub_extra not in ("vocab", "none"):
            raise ConfigError("gateway.stub_extra must be 'vocab' or 'none'")


@dataclass
class ExportConfig:
    shots: int = 1024
    polarity: str | None = None
    split: str = "train"


@dataclass
class EvalConfig:
    # None means every split; otherwise a list such as ["test"].
    filter_splits: list[str] | None = None
    split: str = "test"


@dataclass
class PipelineConfig:
    seed: int = 42
    out_dir: str = "runs/default"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    rules: RulesConfig = field(default_factory=RulesConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    export: ExportConfig = field(default_factory=ExportConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "dataset": DatasetConfig,
    "rules": RulesConfig,
    "sampler": SamplerConfig,
    "filter": FilterConfig,
    "gateway": GatewayConfig,
    "export": ExportConfig,
    "eval": EvalConfig,
}


def _build(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{where}] must be a table")
    raw = dict(raw)
    if cls is SamplerConfig and "gammas" in raw:
        g = raw.pop("gammas")
        if len(g) != 4:
            raise ConfigError("sampler.gammas needs four values")
        raw.update(gamma1=g[0], gamma2=g[1], gamma3=g[2], gamma4=g[3])
    names = {f.name for f in fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def config_from_dict(raw: dict) -> PipelineConfig:
    raw = dict(raw)
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in raw:
            kwargs[name] = _build(cls, raw.pop(name), name)
    for key in ("seed", "out_dir"):
        if key in raw:
            kwargs[key] = raw.pop(key)
    if raw:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(raw))}")
    return PipelineConfig(**kwargs)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    try:
        raw = json.loads(text) if p.suffix == ".json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{p}: {exc}") from None
    cfg = config_from_dict(raw)
    # Relative paths inside a config file are taken relative to that file.
    base = p.resolve().parent
    if cfg.dataset.path and not Path(cfg.dataset.path).is_absolute():
        cfg.dataset.path = str(base / cfg.dataset.path)
    if not Path(cfg.out_dir).is_absolute():
        cfg.out_dir = str(base / cfg.out_dir)
    return cfg
