"""Run configuration: defaults < config file < ``FMEA_*`` environment < flags."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Mapping

from .errors import ConfigError
from .model import TrainConfig

ENV_PREFIX = "FMEA_"


@dataclass(frozen=True)
class RunConfig:
    # training
    epochs: int = 1000
    learning_rate: float = 1e-3
    negative_ratio: int = 5
    split: tuple[float, float, float] = (0.81, 0.09, 0.10)
    alpha: float = 0.7
    beta: float = -0.1
    lam: float = 0.6
    k_overlap: float = 1.0
    weight_decay: float = 0.01
    hidden_dim: int = 128
    text_dim: int = 128
    type_dim: int = 16
    eval_every: int = 50
    eval_k: int = 10
    process_rerank: bool = True
    seed: int | None = None
    # extraction and embeddings
    llm: str = "mock"
    llm_model: str = "gpt-4o"
    transcripts: str = ""
    shortlist_k: int = 5
    embedding: str = "offline"
    embedding_dim: int = 256
    embedding_model: str = "text-embedding-3-small"
    # prediction
    topk: int = 20
    order_logit: bool = True

    def train_config(self) -> TrainConfig:
        if self.seed is None:
            raise ConfigError("a seed is required")
        names = {f.name for f in fields(TrainConfig)}
        values = {k: v for k, v in asdict(self).items() if k in names}
        try:
            return TrainConfig(**values)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def echo(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in asdict(self).items())


_FIELDS = {f.name: f for f in fields(RunConfig)}
_DEFAULTS = RunConfig()


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(format_value(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def _coerce(key: str, text: str):
    default = getattr(_DEFAULTS, key)
    text = text.strip()
    try:
        if key == "seed":
            return None if text.lower() in ("", "none") else int(text)
        if isinstance(default, bool):
            if text.lower() in ("true", "yes", "1", "on"):
                return True
            if text.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, tuple):
            return tuple(float(x) for x in text.split(","))
        return type(default)(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def parse_config_text(text: str, source: str = "config") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; unknown keys are rejected."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def env_overrides(environ: Mapping[str, str] | None = None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for key in _FIELDS:
        name = ENV_PREFIX + key.upper()
        if name in environ:
            out[key] = _coerce(key, environ[name])
    return out


def parse_overrides(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, value = (s.strip() for s in pair.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve_config(path: str | Path | None = None, flags: Mapping | None = None,
                   environ: Mapping[str, str] | None = None) -> RunConfig:
    values: dict = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8"), str(path)))
    values.update(env_overrides(environ))
    values.update({k: v for k, v in (flags or {}).items() if v is not None})
    unknown = set(values) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
    return replace(_DEFAULTS, **values)


def default_config_path() -> Path:
    return Path(__file__).parent / "resources" / "defaults.cfg"
