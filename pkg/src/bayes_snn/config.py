"""Experiment configuration: nested dataclasses loaded from YAML.

Unknown keys are rejected and every value is validated when the config is
built, so mistakes surface with the dotted name of the offending field.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

TRAINERS = ("sgd", "ste", "bayes_gauss", "bayes_bern")
DATASETS = ("two_moons", "mnist_split", "synthetic_patterns")
LEARNERS = ("freq_plain", "freq_ewc", "tacos", "bayes_gauss", "bayes_bern")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name
        self.message = message


@dataclass
class DatasetConfig:
    kind: str = "two_moons"
    T: int = 50
    seed: int = 0
    # two moons
    n_per_class: int = 200
    noise_sigma: float = 0.1
    neurons_per_dim: int = 10
    r_max: float = 0.9
    test_per_class: int = 100
    # OOD grid for two moons
    ood_grid: int = 20
    ood_min_distance: float = 1.5
    ood_extent: list = field(default_factory=lambda: [-3.0, 4.0, -3.0, 3.5])
    # split MNIST
    mnist_dir: str | None = None
    train_per_class: int = 500
    class_pairs: list = field(default_factory=lambda: [[0, 1], [2, 3], [4, 5], [6, 7], [8, 9]])
    # synthetic patterns
    num_classes: int = 2
    channels: int = 40
    active: int = 8
    high: float = 0.5
    low: float = 0.02

    def validate(self, p: str = "dataset") -> None:
        _choice(f"{p}.kind", self.kind, DATASETS)
        _positive(f"{p}.T", self.T)
        _positive(f"{p}.n_per_class", self.n_per_class)
        _positive(f"{p}.test_per_class", self.test_per_class)
        _positive(f"{p}.train_per_class", self.train_per_class)
        _nonneg(f"{p}.noise_sigma", self.noise_sigma)
        if self.neurons_per_dim < 2:
            raise ConfigError(f"{p}.neurons_per_dim", "must be >= 2")
        if not 0 <= self.r_max <= 1:
            raise ConfigError(f"{p}.r_max", "must lie in [0, 1]")
        if len(self.ood_extent) != 4:
            raise ConfigError(f"{p}.ood_extent", "expected [xmin, xmax, ymin, ymax]")
        if not self.class_pairs or any(not cs for cs in self.class_pairs):
            raise ConfigError(f"{p}.class_pairs", "class sets must be non-empty")
        if self.kind == "synthetic_patterns" and self.active * self.num_classes > self.channels:
            raise ConfigError(f"{p}.channels", "too few channels for disjoint patterns")


@dataclass
class ModelConfig:
    layer_sizes: list = field(default_factory=lambda: [64, 64])
    binary: bool = False
    threshold: float | None = None
    tau_mem: float = 10.0
    tau_syn: float = 5.0
    tau_ref: float = 5.0
    kernel_kind: str = "alpha_function"
    ref_gain: float = 1.0
    readout_seed: int = 0
    dtype: str = "float32"

    def validate(self, p: str = "model") -> None:
        if len(self.layer_sizes) < 2 or any(int(n) < 1 for n in self.layer_sizes):
            raise ConfigError(f"{p}.layer_sizes", "need >= 2 positive layer sizes (last is read-out)")
        for name in ("tau_mem", "tau_syn", "tau_ref"):
            _positive(f"{p}.{name}", getattr(self, name))
        _choice(f"{p}.kernel_kind", self.kernel_kind, ("alpha_function", "single_exponential"))
        if self.kernel_kind == "alpha_function" and self.tau_mem == self.tau_syn:
            raise ConfigError(f"{p}.tau_syn", "alpha kernel needs tau_mem != tau_syn")
        _nonneg(f"{p}.ref_gain", self.ref_gain)
        _choice(f"{p}.dtype", self.dtype, ("float32", "float64"))
        if self.threshold is not None:
            _positive(f"{p}.threshold", self.threshold)


@dataclass
class TrainConfig:
    trainer: str = "sgd"
    eta: float = 0.05
    rho: float = 1e-3
    tau: float = 1.0
    epochs: int = 50
    batch_size: int = 32
    n_samples: int = 10
    mode: str = "committee"
    prior_mean: float = 0.0
    prior_precision: float = 1.0
    init_scale: float = 0.1
    samples_per_step: int = 1
    sample_per_sequence: bool = False
    workers: int = 1
    replica_group: int | None = None
    bins: int = 10

    def validate(self, p: str = "train") -> None:
        _choice(f"{p}.trainer", self.trainer, TRAINERS)
        _positive(f"{p}.eta", self.eta)
        _nonneg(f"{p}.rho", self.rho)
        _positive(f"{p}.tau", self.tau)
        _nonneg(f"{p}.epochs", self.epochs)
        _positive(f"{p}.batch_size", self.batch_size)
        _positive(f"{p}.n_samples", self.n_samples)
        _choice(f"{p}.mode", self.mode, ("committee", "ensemble"))
        _positive(f"{p}.prior_precision", self.prior_precision)
        _nonneg(f"{p}.init_scale", self.init_scale)
        _positive(f"{p}.samples_per_step", self.samples_per_step)
        _positive(f"{p}.workers", self.workers)
        _positive(f"{p}.bins", self.bins)
        if self.replica_group is not None:
            _positive(f"{p}.replica_group", self.replica_group)


@dataclass
class ContinualSection:
    learner: str = "bayes_gauss"
    alpha: float = 1.0
    coreset_fraction: float = 0.075
    epochs_per_task: int = 1
    ewc_implicit: bool = True
    tacos_gamma: float = 0.05
    tacos_kappa: float = 0.01
    tacos_delta_nu: float = 0.01
    tacos_rate_threshold: float = 0.1
    tacos_window: int = 20

    def validate(self, p: str = "continual") -> None:
        _choice(f"{p}.learner", self.learner, LEARNERS)
        _nonneg(f"{p}.alpha", self.alpha)
        if not 0 <= self.coreset_fraction <= 1:
            raise ConfigError(f"{p}.coreset_fraction", "must lie in [0, 1]")
        _positive(f"{p}.epochs_per_task", self.epochs_per_task)
        if not 0 < self.tacos_kappa < 1:
            raise ConfigError(f"{p}.tacos_kappa", "must lie in (0, 1)")
        _nonneg(f"{p}.tacos_gamma", self.tacos_gamma)
        _nonneg(f"{p}.tacos_delta_nu", self.tacos_delta_nu)
        _positive(f"{p}.tacos_window", self.tacos_window)


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    continual: ContinualSection = field(default_factory=ContinualSection)
    seed: int = 0
    out: str = "runs/default"

    def validate(self) -> "ExperimentConfig":
        self.dataset.validate()
        self.model.validate()
        self.train.validate()
        self.continual.validate()
        if self.model.binary and self.train.trainer in ("sgd", "bayes_gauss"):
            raise ConfigError("train.trainer", f"{self.train.trainer} needs real-valued weights")
        if not self.model.binary and self.train.trainer in ("ste", "bayes_bern"):
            raise ConfigError("train.trainer", f"{self.train.trainer} needs binary weights")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with dotted overrides, e.g. ``replace(**{"train.rho": 0.1})``."""
        data = self.to_dict()
        for key, value in sections.items():
            node = data
            *path, last = key.split(".")
            for part in path:
                node = node[part]
            if last not in node:
                raise ConfigError(key, "unknown field")
            node[last] = value
        return from_dict(data)


_SECTIONS = {"dataset": DatasetConfig, "model": ModelConfig, "train": TrainConfig,
             "continual": ContinualSection}


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix, "expected a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{prefix}.{unknown[0]}" if prefix else unknown[0], "unknown field")
    kwargs = {}
    for k, v in data.items():
        default = getattr(cls(), k) if k not in _SECTIONS else None
        if k in _SECTIONS and prefix == "":
            kwargs[k] = _build(_SECTIONS[k], v, k)
            continue
        kwargs[k] = _coerce(f"{prefix}.{k}" if prefix else k, v, default)
    return cls(**kwargs)


def _coerce(name: str, value: Any, default: Any):
    """Coerce YAML scalars to the type of the field default (YAML reads 1e-3 as str)."""
    if value is None or default is None:
        return value
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list) and not isinstance(value, list):
            raise TypeError
        if isinstance(default, str) and not isinstance(value, str):
            raise TypeError
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected {type(default).__name__}, got {value!r}") from None
    return value


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {}, "").validate()


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML: {exc}") from None
    return from_dict(data or {})


def _positive(name, v):
    if not v > 0:
        raise ConfigError(name, f"must be > 0, got {v!r}")


def _nonneg(name, v):
    if not v >= 0:
        raise ConfigError(name, f"must be >= 0, got {v!r}")


def _choice(name, v, options):
    if v not in options:
        raise ConfigError(name, f"must be one of {list(options)}, got {v!r}")
