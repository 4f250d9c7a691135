"""Experiment configuration files.

An experiment is one YAML document::

    seed: 0
    dataset:
      source_train: toy/source/train
      source_test: toy/source/test      # optional
      target_train: toy/target/train
      target_test: toy/target/test
      source_layout: null               # preset name when a root has no manifest
      target_layout: null
    model: {architecture: lightweight-tiny, resolution: [96, 96], skip_connections: true}
    pretrain: {epochs: 30, batch_size: 8, learning_rate: 0.01, augment: null}
    adapt: {subset_size: 100, epochs: 25, batch_size_per_domain: 16, lambda_reg: 0.7}
    eval: {max_depth: 10.0, median_scaling: false}
    output: runs/toy

Relative paths resolve against the config file's directory. Unknown keys
are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .datasets import AugmentConfig
from .engine import AdaptConfig, PretrainConfig, augment_from_dict, config_to_dict
from .metrics import EvalProtocol
from .networks import ArchitectureSpec

TOP_KEYS = {"seed", "dataset", "model", "pretrain", "adapt", "eval", "output"}
DATASET_KEYS = {"source_train", "source_test", "target_train", "target_test", "source_layout", "target_layout"}
MODEL_KEYS = {"architecture", "resolution", "skip_connections"}
AUGMENT_KEYS = {f.name for f in dataclasses.fields(AugmentConfig)}


class ConfigError(ValueError):
    pass


def _fields(cls):
    return {f.name for f in dataclasses.fields(cls)}


def _reject_unknown(section: str, data: dict, allowed: set):
    unknown = sorted(set(data) - allowed)
    if unknown:
        where = f"{section}." if section else ""
        raise ConfigError(f"unknown config key(s): {', '.join(where + k for k in unknown)}")


def _augment(section: str, value):
    if value is None:
        return None
    if not isinstance(value, dict):
        raise ConfigError(f"{section}.augment must be a mapping or null")
    _reject_unknown(f"{section}.augment", value, AUGMENT_KEYS)
    try:
        return augment_from_dict(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.augment: {exc}") from exc


@dataclass
class ExperimentConfig:
    dataset: dict
    model: ArchitectureSpec
    pretrain: PretrainConfig
    adapt: AdaptConfig
    subset_size: int
    eval: EvalProtocol
    output: Path
    seed: int = 0
    base_dir: Path = field(default_factory=Path.cwd)

    def path(self, key: str) -> Path | None:
        value = self.dataset.get(key)
        return None if value is None else Path(value)

    def check_paths(self, *keys):
        for key in keys:
            p = self.path(key)
            if p is None:
                raise ConfigError(f"dataset.{key} is required for this command")
            if not p.exists():
                raise ConfigError(f"dataset.{key} path does not exist: {p}")

    def to_dict(self) -> dict:
        adapt = config_to_dict(self.adapt)
        adapt["subset_size"] = self.subset_size
        return {
            "seed": self.seed,
            "dataset": {k: (str(v) if v is not None else None) for k, v in self.dataset.items()},
            "model": {
                "architecture": self.model.id,
                "resolution": list(self.model.input_resolution),
                "skip_connections": self.model.skip_connections,
            },
            "pretrain": config_to_dict(self.pretrain),
            "adapt": adapt,
            "eval": dataclasses.asdict(self.eval),
            "output": str(self.output),
        }

    def dump(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))
        return path


def parse_config(data: dict, base_dir=".") -> ExperimentConfig:
    base_dir = Path(base_dir)
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    _reject_unknown("", data, TOP_KEYS)
    seed = int(data.get("seed", 0))

    dataset = dict(data.get("dataset") or {})
    _reject_unknown("dataset", dataset, DATASET_KEYS)
    for key in ("source_train", "source_test", "target_train", "target_test"):
        if dataset.get(key) is not None:
            p = Path(dataset[key])
            dataset[key] = p if p.is_absolute() else base_dir / p
        else:
            dataset[key] = None
    dataset.setdefault("source_layout", None)
    dataset.setdefault("target_layout", None)

    model = dict(data.get("model") or {})
    _reject_unknown("model", model, MODEL_KEYS)
    try:
        spec = ArchitectureSpec(
            model.get("architecture", "lightweight"),
            tuple(model.get("resolution", (224, 224))),
            bool(model.get("skip_connections", True)),
        )
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc

    pre = dict(data.get("pretrain") or {})
    _reject_unknown("pretrain", pre, _fields(PretrainConfig))
    pre["augment"] = _augment("pretrain", pre.get("augment"))
    pre.setdefault("seed", seed)
    try:
        pretrain = PretrainConfig(**pre)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"pretrain: {exc}") from exc

    ad = dict(data.get("adapt") or {})
    _reject_unknown("adapt", ad, _fields(AdaptConfig) | {"subset_size"})
    subset_size = ad.pop("subset_size", 100)
    if not isinstance(subset_size, int) or subset_size < 1:
        raise ConfigError(f"adapt.subset_size must be a positive integer, got {subset_size!r}")
    ad["augment"] = _augment("adapt", ad.get("augment"))
    ad.setdefault("seed", seed)
    try:
        adapt = AdaptConfig(**ad)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"adapt: {exc}") from exc

    ev = dict(data.get("eval") or {})
    _reject_unknown("eval", ev, _fields(EvalProtocol))
    try:
        protocol = EvalProtocol(**ev)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"eval: {exc}") from exc

    output = Path(data.get("output", "runs/default"))
    if not output.is_absolute():
        output = base_dir / output
    return ExperimentConfig(dataset, spec, pretrain, adapt, subset_size, protocol, output, seed, base_dir)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(data or {}, path.parent)
