"""Run configuration: one YAML file, strict keys, explicit seeds.

Every pipeline stage reads from a RunConfig; flags can override single
fields (dotted paths) and always win over the file. Unknown keys are
rejected loudly - a typoed knob must never silently fall back to a
default.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError


def _check_keys(cls, data: dict, path: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(unknown)} under '{path}'")


def _build(cls, data, path):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"'{path}' must be a mapping, got {type(data).__name__}")
    _check_keys(cls, data, path)
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        sub = _SECTION_TYPES.get((cls, f.name))
        kwargs[f.name] = _build(sub, value, f"{path}.{f.name}") if sub else value
    return cls(**kwargs)


@dataclass
class Seeds:
    """Every stochastic stage has its own explicit seed."""

    split: int = 1
    sample: int = 2
    train: int = 3
    invert: int = 4
    study: int = 5


@dataclass
class DataConfig:
    label_csv: str = "data/labels.csv"
    image_dir: str = "data/images"
    mask_dir: str | None = "data/masks"
    nodule_csv: str | None = "data/nodules.csv"


@dataclass
class SplitConfig:
    # full-scale defaults; desk runs override these downward
    n_train: int = 59481
    n_test_normal: int = 880
    n_test_abnormal: int = 880


@dataclass
class SamplingConfig:
    count_per_image: int = 20
    patch_size: int = 128
    hole_size: int = 64
    fill_value: int = 128


@dataclass
class ModelsConfig:
    """Per-model estimator parameters; geometry comes from sampling."""

    ce: dict = field(default_factory=dict)
    si: dict = field(default_factory=dict)
    ca: dict = field(default_factory=dict)


@dataclass
class EvaluationConfig:
    n_healthy: int = 200  # windows sampled from test_normal images
    n_abnormal: int = 33  # nodule patches (or centered windows at toy scale)
    grid_cases: int = 5
    models: list = field(default_factory=lambda: ["ce", "si", "ca"])


@dataclass
class StudyConfig:
    n_pairs: int = 160
    models: list = field(default_factory=lambda: ["ce", "si", "ca"])
    same_source: bool = False
    host: str = "127.0.0.1"
    port: int = 8000


@dataclass
class RunConfig:
    workdir: str = "runs/default"
    workers: int = 1
    seeds: Seeds = field(default_factory=Seeds)
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    models: ModelsConfig = field(default_factory=ModelsConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    study: StudyConfig = field(default_factory=StudyConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def content_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()

    @property
    def workdir_path(self) -> Path:
        return Path(self.workdir)


_SECTION_TYPES = {
    (RunConfig, "seeds"): Seeds,
    (RunConfig, "data"): DataConfig,
    (RunConfig, "split"): SplitConfig,
    (RunConfig, "sampling"): SamplingConfig,
    (RunConfig, "models"): ModelsConfig,
    (RunConfig, "evaluation"): EvaluationConfig,
    (RunConfig, "study"): StudyConfig,
}


def load_config(path=None, overrides=None) -> RunConfig:
    """Read YAML config and apply dotted-path overrides (flags win)."""
    data = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML: {exc}")
    cfg = _build(RunConfig, data, "config")
    for dotted, raw in overrides or []:
        _apply_override(cfg, dotted, raw)
    return cfg


def _apply_override(cfg, dotted: str, raw: str):
    parts = dotted.split(".")
    target = cfg
    for part in parts[:-1]:
        if not hasattr(target, part):
            raise ConfigError(f"unknown config path '{dotted}'")
        target = getattr(target, part)
    leaf = parts[-1]
    if isinstance(target, dict):
        target[leaf] = yaml.safe_load(raw)
        return
    if not hasattr(target, leaf):
        raise ConfigError(f"unknown config path '{dotted}'")
    current = getattr(target, leaf)
    value = yaml.safe_load(raw)
    if current is not None and value is not None and not isinstance(value, type(current)):
        # allow int->float widening, reject category errors
        if isinstance(current, float) and isinstance(value, int):
            value = float(value)
        elif isinstance(current, (list, dict)) or isinstance(value, (list, dict)):
            pass
        else:
            raise ConfigError(
                f"override '{dotted}'={raw!r} has type {type(value).__name__}, "
                f"expected {type(current).__name__}"
            )
    setattr(target, leaf, value)
