"""Run configuration: one JSON file, overridden by command-line flags."""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .aligner import ADAPTIVE

CONFIG_ENV = "WSALIGN_CONFIG"
DEFAULT_TOLERANCE_MS = {"phone": 40.0, "word": 100.0}
ARC_TYPES = ("W", "D", "PW")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    vocab: str | None = None  # None: built-in 42-token vocabulary
    frame_shift_ms: float = 10.0
    mode: str = "linear"
    beta: float | str = ADAPTIVE
    tolerance_ms: float | None = None  # None: 40 ms phone level, 100 ms word level
    level: str = "phone"
    matching: str = "greedy"
    ph_max_words: int = 3
    add_k: float = 0.1
    lm_scale: float = 1.0
    seed: int = 0
    workers: int = 1
    disable: list[str] = field(default_factory=list)
    peak: float = 0.9
    clean_fraction: float = 0.0

    def __post_init__(self):
        self.validate()

    @property
    def tolerance(self) -> float:
        return DEFAULT_TOLERANCE_MS[self.level] if self.tolerance_ms is None else self.tolerance_ms

    def validate(self) -> None:
        if self.mode not in ("linear", "ws"):
            raise ConfigError(f"mode must be 'linear' or 'ws', not {self.mode!r}")
        if isinstance(self.beta, str):
            if self.beta != ADAPTIVE:
                try:
                    self.beta = float(self.beta)
                except ValueError:
                    raise ConfigError(f"beta must be a number or 'adaptive', not {self.beta!r}") from None
        if not isinstance(self.beta, str):
            self.beta = float(self.beta)
            if math.isnan(self.beta) or self.beta < 0:
                raise ConfigError("beta must be non-negative")
        if self.level not in DEFAULT_TOLERANCE_MS:
            raise ConfigError(f"level must be 'phone' or 'word', not {self.level!r}")
        if self.matching not in ("greedy", "nearest"):
            raise ConfigError(f"matching must be 'greedy' or 'nearest', not {self.matching!r}")
        if self.frame_shift_ms <= 0:
            raise ConfigError("frame_shift_ms must be positive")
        if self.tolerance_ms is not None and self.tolerance_ms < 0:
            raise ConfigError("tolerance_ms must be non-negative")
        if self.ph_max_words < 1:
            raise ConfigError("ph_max_words must be at least 1")
        if self.add_k <= 0:
            raise ConfigError("add_k must be positive")
        if self.lm_scale < 0:
            raise ConfigError("lm_scale must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if not 0.5 < self.peak < 1.0:
            raise ConfigError("peak must lie in (0.5, 1)")
        if not 0.0 <= self.clean_fraction <= 1.0:
            raise ConfigError("clean_fraction must lie in [0, 1]")
        self.disable = sorted({d.upper() for d in self.disable})
        bad = [d for d in self.disable if d not in ARC_TYPES]
        if bad:
            raise ConfigError(f"unknown arc types {bad}; choose from {ARC_TYPES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.beta, float) and math.isinf(self.beta):
            d["beta"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid config JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        return cls.from_json(text)

    def override(self, **kwargs) -> "RunConfig":
        """Copy with the non-None keyword values replaced."""
        d = self.to_dict()
        d.update({k: v for k, v in kwargs.items() if v is not None})
        return RunConfig.from_dict(d)


def load_config(path=None) -> RunConfig:
    """Config from ``path``, else from $WSALIGN_CONFIG, else defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    return RunConfig.load(path) if path else RunConfig()
