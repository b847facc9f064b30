"""Plain-text ``section.key = value`` configuration for the command-line tools."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields, replace

from ..preprocess import PreprocessConfig
from ..regmodel import RegConfig
from ..simworld import PRESETS, ConfigError, RunConfig, SensorConfig, WorldConfig
from ..solver import SolverConfig
from ..submap import SalienceConfig, SubmapRule
from .frontend import FrontEndConfig
from .pipeline import MODELS, GraphConfig
from .train import HarvestConfig


@dataclass(frozen=True)
class TrajectoryConfig:
    kind: str = "forward_backward"    # or "square_loop"
    length: float = 20.0              # m, forward-backward pass
    side: float = 8.0                 # m, loop side
    laps: int = 2

    def __post_init__(self):
        if self.kind not in ("forward_backward", "square_loop"):
            raise ConfigError(f"unknown trajectory kind {self.kind!r}")
        if self.length <= 0 or self.side <= 0 or self.laps < 1:
            raise ConfigError("trajectory size must be positive")


@dataclass(frozen=True)
class ModelConfig:
    mode: str = "learned"
    file: str = ""
    k: int = 16                       # filter bank size
    bank_seed: int = 0
    huber_delta: float = 0.1          # m
    train_frac: float = 0.7

    def __post_init__(self):
        if self.mode not in MODELS:
            raise ConfigError(f"model must be one of {', '.join(MODELS)}")
        if self.k < 2:
            raise ConfigError("filter bank needs at least 2 kernels")
        if not 0 < self.train_frac < 1:
            raise ConfigError("train_frac must lie in (0, 1)")


@dataclass(frozen=True)
class AppConfig:
    seed: int = 0
    preset: str = "dense"
    world: WorldConfig = field(default_factory=lambda: WorldConfig(**PRESETS["dense"]))
    sensor: SensorConfig = field(default_factory=lambda: SensorConfig(noise_sigma=0.2))
    run: RunConfig = field(default_factory=lambda: RunConfig(wheel_scale_sigma=0.01, wheel_scale_tau=5.0,
                                                             accel_bias_sigma=0.02, gyro_bias_sigma=2e-5))
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    submap: SubmapRule = field(default_factory=SubmapRule)
    salience: SalienceConfig = field(default_factory=SalienceConfig)
    registration: RegConfig = field(default_factory=RegConfig)
    frontend: FrontEndConfig = field(default_factory=FrontEndConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    harvest: HarvestConfig = field(default_factory=HarvestConfig)

    def validate(self):
        self.world.validate()
        self.sensor.validate()
        self.run.validate()
        if self.registration.gate_threshold != self.salience.gate_threshold:
            raise ConfigError("salience.gate_threshold and registration.gate_threshold disagree")
        return self

    def to_text(self):
        """Canonical dump; parsing it back gives an equal config."""
        lines = [f"seed = {self.seed}", f"preset = {self.preset}"]
        for f in fields(self):
            sub = getattr(self, f.name)
            if dataclasses.is_dataclass(sub):
                for g in fields(sub):
                    lines.append(f"{f.name}.{g.name} = {_fmt(getattr(sub, g.name))}")
        return "\n".join(lines) + "\n"

    def hash(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(text, like, key):
    text = text.strip()
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, tuple):
            parts = [p for p in text.replace("(", "").replace(")", "").split(",") if p.strip()]
            if len(parts) != len(like):
                raise ValueError(f"expected {len(like)} values")
            return tuple(_coerce(p, x, key) for x, p in zip(like, parts))
        return text
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {text!r} ({e})") from None


def parse_config(text, base: AppConfig | None = None) -> AppConfig:
    """Apply ``section.key = value`` lines on top of ``base`` (defaults if None).

    ``#`` starts a comment.  ``preset`` switches the world defaults and must
    come before any ``world.*`` key.
    """
    cfg = base or AppConfig()
    updates: dict[str, dict] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "seed":
            cfg = replace(cfg, seed=_coerce(value, 0, key))
            continue
        if key == "preset":
            if value not in PRESETS:
                raise ConfigError(f"line {n}: unknown preset {value!r}")
            if "world" in updates:
                raise ConfigError(f"line {n}: preset must precede world.* keys")
            cfg = replace(cfg, preset=value, world=replace(cfg.world, **PRESETS[value]))
            continue
        if "." not in key:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        section, name = key.split(".", 1)
        if section not in {f.name for f in fields(cfg)} or not dataclasses.is_dataclass(getattr(cfg, section)):
            raise ConfigError(f"line {n}: unknown section {section!r}")
        sub = getattr(cfg, section)
        if name not in {f.name for f in fields(sub)}:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        updates.setdefault(section, {})[name] = _coerce(value, getattr(sub, name), key)
    # a single gate threshold feeds both the salience and registration configs
    for a, b in (("salience", "registration"), ("registration", "salience")):
        if "gate_threshold" in updates.get(a, {}) and "gate_threshold" not in updates.get(b, {}):
            updates.setdefault(b, {})["gate_threshold"] = updates[a]["gate_threshold"]
    kw = {}
    for section, vals in updates.items():
        try:
            kw[section] = replace(getattr(cfg, section), **vals)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"section {section}: {e}") from None
    return replace(cfg, **kw).validate()


def load_config(path=None, base: AppConfig | None = None) -> AppConfig:
    if path is None:
        return (base or AppConfig()).validate()
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text, base)
