"""
Run configuration: JSON with four sections and strict key checking.

``profile`` picks the defaults that unspecified keys fall back to:

* ``paper``: 200 epochs, batch 32, Adam at 1e-3, plateau schedule (x0.2 after
  5 flat epochs, floor 1e-5), 128x128x3 inputs, 8 residual blocks, 5 x 20
  MC-dropout passes at rate 0.25.
* ``desk``: same optimizer and schedule, but 30 epochs on 8x8 inputs with
  8 channels and 2 residual blocks.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import SyntheticSpec
from .errors import ConfigError
from .net import DrifaNetConfig
from .uncertainty import EnsembleConfig


@dataclass
class ModelSection:
    channels: int = 64
    blocks: int = 8
    downsample: list[int] = field(default_factory=lambda: [2, 4, 6])
    task_weights: list[float] | None = None
    dropout: float = 0.25
    mfa: bool = True
    mifa: bool = True
    hifa: bool = True
    clia: bool = True
    mgifa: bool = True
    mlifa: bool = True
    omega_d: bool = True
    omega_l: bool = True
    omega_c: bool = True
    omega_dm: bool = True
    omega_lm: bool = True
    omega_cm: bool = True


@dataclass
class DataSection:
    path: str | None = None
    modalities: int = 2
    tasks: int = 1
    classes_per_task: list[int] = field(default_factory=lambda: [2])
    samples_per_class: int = 50
    image_size: list[int] = field(default_factory=lambda: [128, 128, 3])
    shared_signal_strength: float = 1.0
    noise_sigma: float = 0.1
    seed: int = 0
    fractions: list[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])


@dataclass
class TrainSection:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 0.001
    scheduler_factor: float = 0.2
    scheduler_patience: int = 5
    min_lr: float = 1e-5
    seed: int = 0
    augment: list[str] = field(default_factory=list)


@dataclass
class UqSection:
    ensembles: int = 5
    iterations: int = 20
    dropout_rate: float = 0.25
    seeds: list[int] | None = None


SECTIONS = {"model": ModelSection, "data": DataSection, "train": TrainSection, "uq": UqSection}

PROFILES = {
    "paper": {},
    "desk": {
        "model": {"channels": 8, "blocks": 2, "downsample": []},
        "data": {"image_size": [8, 8, 1]},
        "train": {"epochs": 30},
    },
}


@dataclass
class RunConfig:
    profile: str = "paper"
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    uq: UqSection = field(default_factory=UqSection)

    @classmethod
    def for_profile(cls, name: str) -> "RunConfig":
        return from_dict({"profile": name})

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def synthetic_spec(self) -> SyntheticSpec:
        d = self.data
        return SyntheticSpec(d.modalities, d.tasks, tuple(d.classes_per_task), d.samples_per_class,
                             tuple(d.image_size), d.shared_signal_strength, d.noise_sigma, d.seed)

    def net_config(self, modalities: int, in_channels: int, classes_per_task) -> DrifaNetConfig:
        m = self.model
        kwargs = {f.name: getattr(m, f.name) for f in fields(ModelSection)}
        kwargs["downsample"] = tuple(m.downsample)
        kwargs["task_weights"] = None if m.task_weights is None else tuple(m.task_weights)
        return DrifaNetConfig(modalities=modalities, in_channels=in_channels,
                              classes_per_task=tuple(classes_per_task), seed=self.train.seed, **kwargs)

    def ensemble_config(self) -> EnsembleConfig:
        u = self.uq
        return EnsembleConfig(u.ensembles, u.iterations, u.dropout_rate,
                              None if u.seeds is None else tuple(u.seeds))

    def with_overrides(self, **sections) -> "RunConfig":
        """Copy with per-section key overrides, e.g. ``with_overrides(train={"epochs": 2})``."""
        d = self.to_dict()
        for name, values in sections.items():
            if name not in SECTIONS:
                raise ConfigError(f"unknown section {name!r}")
            d[name].update(values)
        return from_dict(d)


NULLABLE = {"data.path": str, "model.task_weights": list, "uq.seeds": list}


def _coerce(section: str, name: str, value, template):
    where = f"{section}.{name}"
    if where in NULLABLE:
        if value is None:
            return None
        template = NULLABLE[where]()
    if isinstance(template, bool):
        ok = isinstance(value, bool)
    elif isinstance(template, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(template, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(template, list):
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, str)
    if not ok:
        raise ConfigError(f"{where} must be of type {type(template).__name__}, got {value!r}")
    return value


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(raw) - {"profile", *SECTIONS}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    profile = raw.get("profile", "paper")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    sections = {}
    for name, cls in SECTIONS.items():
        defaults = asdict(cls())
        defaults.update(copy.deepcopy(PROFILES[profile].get(name, {})))
        given = raw.get(name, {})
        if not isinstance(given, dict):
            raise ConfigError(f"section {name!r} must be an object")
        extra = set(given) - set(defaults)
        if extra:
            raise ConfigError(f"unknown keys in {name!r}: {sorted(extra)}")
        values = dict(defaults)
        for key, value in given.items():
            values[key] = _coerce(name, key, value, defaults[key])
        sections[name] = cls(**values)
    cfg = RunConfig(profile=profile, **sections)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    t = cfg.train
    if t.epochs < 1 or t.batch_size < 1:
        raise ConfigError("train.epochs and train.batch_size must be positive")
    if t.lr <= 0 or t.min_lr < 0 or not 0 < t.scheduler_factor < 1 or t.scheduler_patience < 1:
        raise ConfigError("invalid optimizer or scheduler settings")
    bad = set(t.augment) - {"rotate90", "flip_h", "flip_v"}
    if bad:
        raise ConfigError(f"unknown augmentations {sorted(bad)}")
    if len(cfg.data.fractions) != 3 or abs(sum(cfg.data.fractions) - 1.0) > 1e-9:
        raise ConfigError("data.fractions must be three numbers summing to 1")
    if len(cfg.data.image_size) != 3:
        raise ConfigError("data.image_size must be [H, W, C]")
    if not 0 <= cfg.model.dropout < 1 or not 0 <= cfg.uq.dropout_rate < 1:
        raise ConfigError("dropout rates must lie in [0, 1)")
    if cfg.uq.ensembles < 1 or cfg.uq.iterations < 1:
        raise ConfigError("uq.ensembles and uq.iterations must be positive")
    if cfg.uq.seeds is not None and len(cfg.uq.seeds) != cfg.uq.ensembles:
        raise ConfigError("uq.seeds must list one seed per ensemble member")


def loads(text: str) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return from_dict(raw)


def load(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text)


def dump(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(cfg.to_json())
