"""Run configuration for power studies and data analyses."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass
class RunConfig:
    """Everything a power study needs.

    ``estimator`` is ``known`` (statistic at the true parameter) or an
    estimator string such as ``mle``. ``test`` is ``single`` (one divisible
    statistic), ``ks`` (max of partial sums) or ``ks_star`` (transformed
    process). ``calibration`` picks MC-calibrated or asymptotic critical
    values; ``sides`` applies to single statistics only.
    """

    model: str = "constant"
    domain: tuple = (0.0, 1.0)
    theta: list | None = None
    K: int = 100
    kernel: str = "pearson"
    estimator: str = "mle"
    direction: str = "null"
    direction_params: dict = field(default_factory=dict)
    strength: float = 1.0
    T: float | None = None
    test: str = "single"
    calibration: str = "mc"
    sides: str = "equal"
    alpha: float = 0.05
    replicates: int = 10_000
    seed: int = 0
    workers: int = 1
    bootstrap: str = "classical"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if int(self.replicates) < 100:
            raise ConfigError("replicates must be at least 100")
        if int(self.K) < 2:
            raise ConfigError("K must be at least 2")
        if self.test not in ("single", "ks", "ks_star"):
            raise ConfigError(f"unknown test {self.test!r}")
        if self.calibration not in ("mc", "asymptotic"):
            raise ConfigError(f"unknown calibration {self.calibration!r}")
        if self.sides not in ("equal", "abs", "upper", "lower"):
            raise ConfigError(f"unknown sides {self.sides!r}")
        if self.bootstrap not in ("classical", "projected"):
            raise ConfigError(f"unknown bootstrap mode {self.bootstrap!r}")
        if self.test == "ks_star" and self.estimator != "mle":
            raise ConfigError("ks_star requires the mle estimator")
        if len(self.domain) != 2 or not float(self.domain[1]) > float(self.domain[0]):
            raise ConfigError("domain must be [low, high] with high > low")
        self.K = int(self.K)
        self.replicates = int(self.replicates)
        self.seed = int(self.seed)
        self.workers = int(self.workers)
        self.domain = (float(self.domain[0]), float(self.domain[1]))

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        """Build from a flat mapping or one with per-module sections."""
        flat: dict = {}
        for key, val in data.items():
            if isinstance(val, dict) and key in ("models", "statistics", "estimation", "harness",
                                                 "alternative", "run"):
                flat.update(val)
            else:
                flat[key] = val
        known = {f.name for f in fields(cls)}
        unknown = set(flat) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**flat)

    @classmethod
    def from_file(cls, path) -> RunConfig:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)

    def override(self, **kwargs) -> RunConfig:
        data = asdict(self)
        data.update({k: v for k, v in kwargs.items() if v is not None})
        return RunConfig(**data)

    def to_dict(self) -> dict:
        return asdict(self)
