"""YAML run configuration with strict keys and dotted overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

__all__ = ["Config", "ConfigError", "load_config", "apply_overrides", "schema", "config_hash", "to_dict"]


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key path."""


@dataclass
class ModelSection:
    gamma: float = 8.0
    kappa: float = 0.5
    kernel: str = "exponential"
    sigma: float = 1.0


@dataclass
class WaveSection:
    L_w: float = 30.0
    h: float = 0.05
    tol: float = 1e-8


@dataclass
class ChainSection:
    P: int = 3
    N: int = 400
    N_list: list = field(default_factory=lambda: [50, 100, 200, 400, 800])
    T: float = 1.0
    replicas: int = 1000
    output_points: int = 101
    x0: list = field(default_factory=lambda: [0.2, 0.4, 0.7])
    spacing: float = 1.0
    clamp: bool = False
    alternative: bool = False
    sde_dt: float = 1e-4


@dataclass
class NoiseSection:
    epsilon: float = 0.1
    m_ref: int = 128
    draws: int = 100_000


@dataclass
class SPDESection:
    N: float = 100.0
    delta: typing.Optional[float] = None
    dt: float = 0.0025
    dt_max: float = 0.05
    T: float = 1.0
    m_list: list = field(default_factory=lambda: [4, 8, 16, 32])
    L_rule: dict = field(default_factory=lambda: {4: 6, 8: 8, 16: 10, 32: 12})
    L_ref: int = 16
    replicas: int = 200
    p: float = 2.0
    terminal_fraction: float = 0.25


@dataclass
class HarnessSection:
    seed: int = 0
    slope_range: list = field(default_factory=lambda: [-0.65, -0.35])
    variance_rtol: float = 0.05
    ks_level: float = 0.01


@dataclass
class OutputSection:
    directory: str = "out"
    formats: list = field(default_factory=lambda: ["csv", "svg"])


@dataclass
class Config:
    model: ModelSection = field(default_factory=ModelSection)
    wave: WaveSection = field(default_factory=WaveSection)
    chain: ChainSection = field(default_factory=ChainSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    spde: SPDESection = field(default_factory=SPDESection)
    harness: HarnessSection = field(default_factory=HarnessSection)
    output: OutputSection = field(default_factory=OutputSection)


_POSITIVE = {
    "model.gamma", "model.sigma", "wave.L_w", "wave.h", "wave.tol", "chain.P", "chain.N", "chain.T",
    "chain.replicas", "chain.output_points", "chain.spacing", "chain.sde_dt", "noise.epsilon", "noise.m_ref",
    "noise.draws", "spde.N", "spde.dt", "spde.dt_max", "spde.T", "spde.L_ref", "spde.replicas", "spde.p",
    "spde.terminal_fraction", "harness.variance_rtol", "harness.ks_level",
}


def _type_name(tp) -> str:
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return f"{_type_name(args[0])} or null"
    return getattr(tp, "__name__", str(tp))


def _coerce(value, tp, path):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        if value is None:
            return None
        tp = [a for a in typing.get_args(tp) if a is not type(None)][0]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected bool, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected int, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {value!r}")
        return value
    if tp is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected list, got {value!r}")
        return value
    if tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected mapping, got {value!r}")
        return value
    return value


def _build(cls, data, prefix=""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or '<root>'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{prefix + '.' if prefix else ''}{unknown[0]}: unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        path = f"{prefix}.{f.name}" if prefix else f.name
        if f.name not in data:
            continue
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            kwargs[f.name] = _build(tp, data[f.name], path)
        else:
            kwargs[f.name] = _coerce(data[f.name], tp, path)
    return cls(**kwargs)


def _validate(cfg: Config) -> Config:
    for path in sorted(_POSITIVE):
        sec, key = path.split(".")
        val = getattr(getattr(cfg, sec), key)
        if val is not None and not val > 0:
            raise ConfigError(f"{path}: must be positive, got {val}")
    if not 0 < cfg.model.kappa < 1:
        raise ConfigError(f"model.kappa: must lie in (0, 1), got {cfg.model.kappa}")
    if cfg.model.kernel not in ("exponential", "gaussian"):
        raise ConfigError(f"model.kernel: must be 'exponential' or 'gaussian', got {cfg.model.kernel!r}")
    for path, seq in (("chain.N_list", cfg.chain.N_list), ("spde.m_list", cfg.spde.m_list)):
        if any(b <= a for a, b in zip(seq, seq[1:])):
            raise ConfigError(f"{path}: must be strictly increasing")
    if len(cfg.chain.x0) != cfg.chain.P:
        raise ConfigError(f"chain.x0: needs {cfg.chain.P} entries, got {len(cfg.chain.x0)}")
    if cfg.spde.dt > cfg.spde.dt_max:
        raise ConfigError(f"spde.dt: {cfg.spde.dt} exceeds spde.dt_max {cfg.spde.dt_max}")
    if cfg.spde.delta is not None and not cfg.spde.delta > 0:
        raise ConfigError("spde.delta: must be positive or null")
    cfg.spde.L_rule = {int(k): int(v) for k, v in cfg.spde.L_rule.items()}
    return cfg


def to_dict(cfg: Config) -> dict:
    return dataclasses.asdict(cfg)


def _set_dotted(data: dict, key: str, value):
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{key}: cannot descend into a non-mapping")
    node[parts[-1]] = value


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``key.path=value`` strings; values parse as YAML scalars, last repeat wins."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"{item}: override must look like key.path=value")
        key, raw = item.split("=", 1)
        _set_dotted(data, key.strip(), yaml.safe_load(raw))
    return data


def load_config(path=None, overrides=None) -> Config:
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError as exc:
            raise ConfigError(f"<file>: {path} not found") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"<file>: YAML parse error: {exc}") from exc
    data = apply_overrides(data, overrides)
    return _validate(_build(Config, data))


def config_hash(cfg: Config) -> str:
    blob = json.dumps(to_dict(cfg), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def schema(cls=Config) -> dict:
    """Key tree with types and defaults, as published in the README."""
    out = {}
    default = cls()
    hints = typing.get_type_hints(cls)
    for f in dataclasses.fields(cls):
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            out[f.name] = schema(tp)
        else:
            out[f.name] = {"type": _type_name(tp), "default": getattr(default, f.name)}
    return out
