"""Training / constructor configuration and the flat ``key = value`` config file."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ConstructorConfig:
    initial_set_size: int = 5       # |I|
    top_k: int = 2                  # K
    neighbors_per_keyword: int = 1
    R_p_drop: float = 0.05
    prefix_guard: int = 4           # neighbors sharing this many leading chars are variants
    exclude_stopwords: bool = True
    alpha_only: bool = True         # neighbors must be alphabetic

    def __post_init__(self):
        if self.initial_set_size < 1 or self.top_k < 1 or self.neighbors_per_keyword < 1:
            raise ConfigError("initial_set_size, top_k and neighbors_per_keyword must be positive")
        if self.top_k > self.initial_set_size:
            raise ConfigError(f"top_k={self.top_k} exceeds initial_set_size={self.initial_set_size}")
        if not 0.0 <= self.R_p_drop < 1.0:
            raise ConfigError(f"R_p_drop must be in [0, 1), got {self.R_p_drop}")


@dataclass(frozen=True)
class TrainConfig:
    L: int = 128
    B_G: int = 4
    B_S: int = 8
    R_p_drop: float = 0.05
    alpha: float = 1.0
    beta: float = 0.25
    tau: float = 0.05
    lr: float = 1e-3
    epochs: int = 30
    seed: int = 0
    no_ccsg: bool = False
    hidden: int = 64
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    initial_set_size: int = 5
    top_k: int = 2
    neighbors_per_keyword: int = 1
    contribution_mode: str = "gradient"
    holdout_fraction: float = 0.1

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if self.B_G > self.B_S:
            raise ConfigError(f"B_G={self.B_G} exceeds B_S={self.B_S}")
        if self.B_G < 1 or self.L < 1 or self.epochs < 0 or self.hidden < 1:
            raise ConfigError("B_G, L and hidden must be positive, epochs non-negative")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.contribution_mode not in ("gradient", "grad_input"):
            raise ConfigError(f"unknown contribution_mode {self.contribution_mode!r}")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must be in [0, 1)")
        self.constructor()  # validates the shared fields

    def constructor(self) -> ConstructorConfig:
        return ConstructorConfig(
            initial_set_size=self.initial_set_size,
            top_k=self.top_k,
            neighbors_per_keyword=self.neighbors_per_keyword,
            R_p_drop=self.R_p_drop,
        )

    def replace(self, **changes) -> "TrainConfig":
        data = asdict(self)
        data.update(changes)
        return TrainConfig(**data)

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in asdict(self).items())

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:12]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(name: str, kind, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if kind in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key] = value
    return out


def build_config(path=None, **overrides) -> TrainConfig:
    """Defaults, then the config file (if any), then non-None overrides."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    values: dict = {}
    if path is not None:
        for key, raw in parse_config_text(Path(path).read_text(encoding="utf-8")).items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = raw
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = value
    return TrainConfig(**{k: _coerce(k, types[k], v) for k, v in values.items()})
