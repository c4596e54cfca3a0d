"""Experiment configuration: JSON with an explicit schema version."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .environment import PhysicsParams, RayConfig
from .errors import ConfigError
from .evolution import EAConfig

CONFIG_SCHEMA = "spikebalance.config/1"


@dataclass(frozen=True)
class TaskConfig:
    duration: float = 500.0
    gain_range: tuple = (1.0, 5.0)

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigError("task.duration must be > 0")
        lo, hi = self.gain_range
        if not 0 < lo <= hi:
            raise ConfigError("task.gain_range must satisfy 0 < lo <= hi")


@dataclass(frozen=True)
class AnalysisConfig:
    bin_width: float = 0.01
    aggregator: str = "max"
    top_k: int = 10
    angle_units: str = "rad"
    record_duration: float | None = None

    def __post_init__(self):
        if not self.bin_width > 0:
            raise ConfigError("analysis.bin_width must be > 0")
        if self.aggregator not in ("max", "mean"):
            raise ConfigError("analysis.aggregator must be 'max' or 'mean'")
        if self.angle_units not in ("rad", "deg"):
            raise ConfigError("analysis.angle_units must be 'rad' or 'deg'")
        if self.top_k < 1:
            raise ConfigError("analysis.top_k must be >= 1")


@dataclass(frozen=True)
class GridConfig:
    theta_range_deg: tuple = (-45.0, 45.0)
    omega_range: tuple = (-0.01, 0.01)
    resolution: tuple = (31, 21)
    duration: float | None = None

    def __post_init__(self):
        if min(self.resolution) < 2:
            raise ConfigError("generalization.resolution needs >= 2 points per axis")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    runs: int = 10
    workers: int = 1
    physics: PhysicsParams = field(default_factory=PhysicsParams)
    rays: RayConfig = field(default_factory=RayConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    ea: EAConfig = field(default_factory=EAConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    generalization: GridConfig = field(default_factory=GridConfig)

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d.pop("workers")  # execution detail, never changes results
        return {"schema": CONFIG_SCHEMA, **_jsonable(d)}

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def run_seed(self, k):
        """Seed of the ``k``-th independent evolutionary run."""
        return int(np.random.SeedSequence([self.seed, k]).generate_state(1)[0])

    def ea_for_run(self, k):
        return EAConfig(**{**asdict(self.ea), "seed": self.run_seed(k)})

    def with_overrides(self, seed=None, workers=None):
        kw = {}
        if seed is not None:
            kw["seed"] = int(seed)
        if workers is not None:
            kw["workers"] = int(workers)
        return ExperimentConfig(**{**{f.name: getattr(self, f.name) for f in fields(self)}, **kw})

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        schema = data.pop("schema", None)
        if schema != CONFIG_SCHEMA:
            raise ConfigError(f"config schema must be {CONFIG_SCHEMA!r}, got {schema!r}")
        sections = {"physics": PhysicsParams, "rays": RayConfig, "task": TaskConfig,
                    "ea": EAConfig, "analysis": AnalysisConfig, "generalization": GridConfig}
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        kw = {}
        for name, value in data.items():
            if name in sections:
                kw[name] = _build(sections[name], value, name)
            else:
                kw[name] = value
        try:
            return cls(**kw)
        except TypeError as err:
            raise ConfigError(str(err)) from None

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"config {path} is not valid JSON: {err}") from None
        return cls.from_dict(data)


def _build(cls, value, section):
    if not isinstance(value, dict):
        raise ConfigError(f"{section} must be an object")
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(value) - allowed)
    if unknown:
        raise ConfigError(f"unknown fields in {section}: {', '.join(unknown)}")
    value = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
    try:
        return cls(**value)
    except TypeError as err:
        raise ConfigError(f"{section}: {err}") from None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def desk_preset(**overrides):
    """Scaled-down experiment: 20 time-unit trials, 10 runs of <= 150 generations."""
    cfg = ExperimentConfig(
        seed=2024,
        runs=10,
        task=TaskConfig(duration=20.0),
        # sparse, large mutations escape the one-sided balancing optimum
        ea=EAConfig(pop_size=100, generations=150, mutation_std=0.25, mutation_prob=0.1),
    )
    return cfg.with_overrides(**overrides) if overrides else cfg


def tiny_preset():
    """Smoke-test scale; finishes in seconds."""
    return ExperimentConfig(
        seed=7,
        runs=2,
        task=TaskConfig(duration=2.0),
        ea=EAConfig(pop_size=8, generations=5),
        analysis=AnalysisConfig(top_k=2),
        generalization=GridConfig(resolution=(3, 3), duration=2.0),
    )


def paper_preset():
    """Full-scale setting: 100 runs of 500 time-unit trials."""
    return ExperimentConfig(runs=100)


PRESETS = {"desk": desk_preset, "tiny": tiny_preset, "paper": paper_preset}
