"""Declarative run configuration stored as canonical JSON.

Canonical form: keys sorted, two-space indent, UTF-8, trailing newline.
Parsing then serializing a canonical file reproduces it byte for byte.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import process
from .errors import ArgumentError, ConfigError
from .samplers import SamplerConfig
from .scores import TABULAR_LIMIT
from .training import TrainConfig

SECTIONS = ("process", "schedule", "model", "train", "sampling", "corpus", "output_dir")


@dataclass
class RunConfig:
    process: dict = field(default_factory=lambda: {"kind": "absorbing", "n": 8, "eta": 1e-5})
    schedule: dict = field(default_factory=lambda: {"kind": "loglinear"})
    model: dict = field(default_factory=lambda: {"backend": "mlp", "d": 4})
    train: dict = field(default_factory=dict)
    sampling: dict = field(default_factory=dict)
    corpus: dict = field(default_factory=dict)
    output_dir: str = "runs"

    def __post_init__(self):
        self.validate()

    # typed views; each raises ConfigError on bad values
    def spec(self) -> process.TransitionSpec:
        p = {k: v for k, v in self.process.items() if k != "eta"}
        return _wrap(process.TransitionSpec.from_dict, p)

    @property
    def eta(self) -> float:
        return float(self.process.get("eta", 1e-5))

    def noise_schedule(self):
        return _wrap(process.schedule_from_dict, self.schedule)

    def train_config(self) -> TrainConfig:
        return _wrap(TrainConfig.from_dict, self.train)

    def sampler_config(self, **overrides) -> SamplerConfig:
        s = {k: v for k, v in self.sampling.items() if k != "num_samples"}
        s.update({k: v for k, v in overrides.items() if v is not None})
        return _wrap(lambda d: SamplerConfig(**d), s)

    @property
    def d(self) -> int:
        return int(self.model["d"])

    def validate(self) -> None:
        spec = self.spec()
        self.noise_schedule()
        self.train_config()
        self.sampler_config()
        if not 0 <= self.eta < 1:
            raise ConfigError("process.eta must lie in [0, 1)")
        if "d" not in self.model or int(self.model["d"]) < 1:
            raise ConfigError("model.d must be a positive integer")
        backend = self.model.get("backend")
        if backend not in ("tabular", "mlp", "mean_mlp"):
            raise ConfigError(f"unknown model backend {backend!r}")
        if backend == "tabular" and spec.n_states ** self.d > TABULAR_LIMIT:
            raise ConfigError(f"tabular backend needs n_states**d <= {TABULAR_LIMIT}")
        unknown = set(self.corpus) - {"train", "valid", "vocab"}
        if unknown:
            raise ConfigError(f"unknown corpus keys {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in SECTIONS}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())


def _wrap(fn, arg):
    try:
        return fn(arg)
    except (ArgumentError, ConfigError, TypeError, KeyError, ValueError) as e:
        raise ConfigError(str(e)) from None
