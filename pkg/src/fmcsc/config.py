"""Experiment configuration and its flat ``key = value`` text format.

Keys are dotted (``partition.dirichlet_beta = 500``); blank lines and ``#``
comments are ignored; unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .data import PartitionConfig, SyntheticSpec
from .errors import ConfigError
from .server import DpConfig


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 5
    local_epochs: int = 25
    pretrain_epochs: int = 250
    distill_epochs: int | None = None  # defaults to local_epochs
    learning_rate: float = 3e-4
    batch_size: int = 256
    tau_m: float = 0.5
    tau_p: float = 0.5


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple[int, ...] = (500, 500, 2000)
    latent_dim: int = 20
    head_hidden: int = 256
    feature_dim: int = 20


@dataclass(frozen=True)
class WeightConfig:
    delta_m: float = 1.0
    delta_p: float = 1.0
    per_type_normalization: bool = False


@dataclass(frozen=True)
class Toggles:
    consensus_pretraining: bool = True  # component A
    global_distillation: bool = True  # component B
    model_contrast: bool = True  # component C
    weighted_aggregation: bool = True  # component D
    feature_contrast: bool = True


@dataclass(frozen=True)
class EvalConfig:
    clusters: int | None = None  # defaults to the dataset's class count
    restarts: int = 10
    max_iters: int = 300
    normalize_features: bool = True  # cluster directions, matching the cosine losses


@dataclass(frozen=True)
class ExperimentConfig:
    data_path: str | None = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: WeightConfig = field(default_factory=WeightConfig)
    dp: DpConfig = field(default_factory=DpConfig)
    toggles: Toggles = field(default_factory=Toggles)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    output_dir: str = "out"
    workers: int = 1

    def validate(self) -> None:
        t = self.train
        if t.rounds < 0 or t.local_epochs < 0 or t.pretrain_epochs < 0:
            raise ConfigError("rounds and epoch counts must be non-negative")
        if t.distill_epochs is not None and t.distill_epochs < 0:
            raise ConfigError("distill_epochs must be non-negative")
        if t.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if t.learning_rate <= 0 or t.tau_m <= 0 or t.tau_p <= 0:
            raise ConfigError("learning_rate and temperatures must be positive")
        if self.model.latent_dim != self.model.feature_dim:
            raise ConfigError("model contrast compares latent codes with common semantics; latent_dim must equal feature_dim")
        if not self.model.hidden or min(self.model.hidden) < 1:
            raise ConfigError("model.hidden needs at least one positive width")
        for name in ("delta_m", "delta_p"):
            value = getattr(self.weights, name)
            if not 0 < value <= 1:
                raise ConfigError(f"weights.{name} must lie in (0, 1]")
        self.dp.validate()
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.eval.clusters is not None and self.eval.clusters < 1:
            raise ConfigError("eval.clusters must be positive")

    def with_overrides(self, **sections: dict[str, Any]) -> "ExperimentConfig":
        """Replace fields section by section, e.g. ``toggles={"model_contrast": False}``."""
        changes = {}
        for name, value in sections.items():
            current = getattr(self, name)
            changes[name] = dataclasses.replace(current, **value) if isinstance(value, dict) else value
        return dataclasses.replace(self, **changes)


# ------------------------------------------------------------------ parsing


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.replace(" ", "").split(",") if p)


def _optional(conv: Callable[[str], Any], *none_words: str) -> Callable[[str], Any]:
    def parse(text: str):
        return None if text.strip().lower() in none_words else conv(text)

    return parse


_SECTIONS = {
    "synthetic": SyntheticSpec,
    "partition": PartitionConfig,
    "train": TrainConfig,
    "model": ModelConfig,
    "weights": WeightConfig,
    "dp": DpConfig,
    "toggles": Toggles,
    "eval": EvalConfig,
}

_CONVERTERS: dict[str, Callable[[str], Any]] = {
    "data.path": str,
    "seed": int,
    "output_dir": str,
    "workers": int,
    "synthetic.view_dims": _ints,
    "partition.single_view_assignment": _optional(_ints, "auto", "none", ""),
    "partition.dirichlet_beta": _optional(float, "iid", "none"),
    "train.distill_epochs": _optional(int, "auto", "none"),
    "model.hidden": _ints,
    "dp.epsilon": _optional(float, "off", "none", "disabled"),
    "eval.clusters": _optional(int, "auto", "none"),
}

_TYPE_CONVERTERS = {"int": int, "float": float, "bool": _bool, "str": str}


def _converter(key: str) -> Callable[[str], Any]:
    if key in _CONVERTERS:
        return _CONVERTERS[key]
    section, _, name = key.partition(".")
    cls = _SECTIONS.get(section)
    if cls is None or not name:
        raise ConfigError(f"unknown config key {key!r}")
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    if name not in types:
        raise ConfigError(f"unknown config key {key!r}")
    conv = _TYPE_CONVERTERS.get(str(types[name]))
    if conv is None:
        raise ConfigError(f"config key {key!r} has no text form")
    return conv


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    config = base or ExperimentConfig()
    sections: dict[str, dict[str, Any]] = {}
    top: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = key.strip(), value.strip()
        conv = _converter(key)
        try:
            parsed = conv(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
        if key == "data.path":
            top["data_path"] = parsed
        elif "." in key:
            section, name = key.split(".", 1)
            sections.setdefault(section, {})[name] = parsed
        else:
            top[key] = parsed
    config = config.with_overrides(**sections)
    config = dataclasses.replace(config, **top)
    config.validate()
    return config


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text())


def _format(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_echo(config: ExperimentConfig) -> str:
    """Normalized ``key = value`` text, sorted by key; parses back to ``config``."""
    items = {"data.path": config.data_path, "seed": config.seed, "output_dir": config.output_dir, "workers": config.workers}
    for section in _SECTIONS:
        for f in dataclasses.fields(getattr(config, section)):
            items[f"{section}.{f.name}"] = getattr(getattr(config, section), f.name)
    return "".join(f"{k} = {_format(items[k])}\n" for k in sorted(items) if not (k == "data.path" and items[k] is None))


def parse_synthetic_spec(text: str) -> SyntheticSpec:
    """Synthetic-dataset spec file: the ``synthetic.*`` keys, prefix optional."""
    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line and not line.startswith("synthetic."):
            line = "synthetic." + line
        lines.append(line)
    return parse_config_text("\n".join(lines)).synthetic
