"""Run configuration shared by the command-line subcommands.

A config file is JSON with optional sections. Unknown keys anywhere are
rejected, and ``to_dict`` echoes every value including defaults.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import InvalidConfig
from .fusion import FusionConfig
from .gat import ModelConfig
from .simulator import ScenarioKind
from .training import LossConfig, OptimConfig


@dataclass(frozen=True)
class SimulatorSection:
    kinds: tuple = tuple(k.value for k in ScenarioKind)
    scenarios_per_kind: int = 2
    duration: float = 15.0
    noise_scale: float = 1.0
    motion_scale: float = 1.0
    sensor_dropout_prob: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(self.kinds))
        try:
            [ScenarioKind(k) for k in self.kinds]
        except ValueError as e:
            raise InvalidConfig(str(e)) from None
        if self.scenarios_per_kind < 1:
            raise InvalidConfig("scenarios_per_kind must be at least 1")


@dataclass(frozen=True)
class TrainingSection:
    optim: OptimConfig = field(default_factory=OptimConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    label_source: str = "truth"
    val_fraction: float = 0.2
    window_stride: int = 1

    def __post_init__(self):
        if self.label_source not in ("truth", "fused"):
            raise InvalidConfig(f"label_source must be 'truth' or 'fused', got {self.label_source!r}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise InvalidConfig("val_fraction must lie in [0, 1)")
        if self.window_stride < 1:
            raise InvalidConfig("window_stride must be at least 1")


@dataclass(frozen=True)
class EvaluationSection:
    drop_sensors: tuple = ()
    no_inter_attention: bool = False
    window_stride: int = 1
    latency_iterations: int = 100

    def __post_init__(self):
        object.__setattr__(self, "drop_sensors", tuple(self.drop_sensors))


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    simulator: SimulatorSection = field(default_factory=SimulatorSection)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingSection = field(default_factory=TrainingSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d, "config")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise InvalidConfig(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(d)


def _build(cls, d, where: str):
    if not isinstance(d, dict):
        raise InvalidConfig(f"{where} must be a JSON object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise InvalidConfig(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in d.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else None
        if default is not None and hasattr(default, "__dataclass_fields__"):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        else:
            kwargs[name] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise InvalidConfig(f"{where}: {e}") from None
