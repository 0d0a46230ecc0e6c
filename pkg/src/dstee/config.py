"""Experiment configuration and its flat ``key = value`` text format.

Lines are ``key = value``; ``#`` starts a comment. Tuples are comma separated,
booleans are ``true``/``false`` and an unset optional integer is ``none``.
Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .numerics import NetworkSpec
from .policies import DROP_MODES, POLICIES, DropSchedule, GrowthPolicy
from .sparsity import ALLOCATIONS, COUNTER_INITS

DATASETS = ("mnist", "synthetic_blobs", "synthetic_moons")
SWEEP_PARAMS = ("c", "epsilon", "global_sparsity", "drop_fraction")


@dataclass(frozen=True)
class ExperimentConfig:
    label: str = "run"
    out_dir: str = "runs"
    # data
    dataset: str = "mnist"
    data_dir: str = "data/mnist"
    n_samples: int = 2000
    noise: float = 1.0
    n_classes: int = 4
    input_dim: int = 20
    # network and sparsity
    hidden_sizes: tuple[int, ...] = (300, 100)
    global_sparsity: float = 0.9
    allocation: str = "erk"
    # growth policy
    policy: str = "dst_ee"
    c: float = 0.1
    epsilon: float = 1.0
    signed_scores: bool = False
    counter_init: str = "mask"
    # schedule
    drop_fraction: float = 0.3
    drop_schedule: str = "cosine"
    delta_t: int = 100
    t_end: int = 10000
    total_iterations: int | None = None
    # optimizer
    lr0: float = 0.1
    lr_min: float = 0.0
    momentum: float = 0.9
    batch_size: int = 128
    # bookkeeping
    seed: int = 0
    eval_every: int = 100
    probe_size: int = 256
    dtype: str = "float32"
    repeat_seeds: tuple[int, ...] = field(default=())

    def __post_init__(self):
        for name, allowed in (("dataset", DATASETS), ("policy", POLICIES), ("allocation", ALLOCATIONS),
                              ("drop_schedule", DROP_MODES), ("counter_init", COUNTER_INITS),
                              ("dtype", ("float32", "float64"))):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            # keeps the text format lossless
            if isinstance(value, str) and ("#" in value or value.splitlines() not in ([], [value])
                                           or value != value.strip()):
                raise ConfigError(f"{f.name} may not contain '#', line breaks or edge whitespace")
        if not self.label or ".." in Path(self.label).parts or Path(self.label).is_absolute():
            raise ConfigError(f"invalid run label {self.label!r}")
        if not 0.0 <= self.global_sparsity < 1.0:
            raise ConfigError(f"global_sparsity must lie in [0, 1), got {self.global_sparsity}")
        if any(h <= 0 for h in self.hidden_sizes):
            raise ConfigError("hidden sizes must be positive")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @property
    def iterations(self) -> int:
        return self.t_end if self.total_iterations is None else self.total_iterations

    def network(self, n_inputs: int, n_classes: int) -> NetworkSpec:
        return NetworkSpec.mlp([n_inputs, *self.hidden_sizes, n_classes])

    def train_config(self, n_inputs: int, n_classes: int):
        from .trainer import TrainConfig

        return TrainConfig(
            net=self.network(n_inputs, n_classes),
            global_sparsity=self.global_sparsity,
            allocation=self.allocation,
            policy=GrowthPolicy(self.policy, self.c, self.epsilon, self.signed_scores),
            drop=DropSchedule(self.drop_fraction, self.drop_schedule, self.t_end),
            delta_t=self.delta_t,
            t_end=self.t_end,
            total_iterations=self.total_iterations,
            lr0=self.lr0,
            lr_min=self.lr_min,
            momentum=self.momentum,
            batch_size=self.batch_size,
            seed=self.seed,
            eval_every=self.eval_every,
            counter_init=self.counter_init,
            probe_size=self.probe_size,
            dtype=self.dtype,
        )

    def hash(self) -> str:
        return hashlib.sha256(serialize(self).encode()).hexdigest()[:16]


_HINTS = typing.get_type_hints(ExperimentConfig)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(key: str, text: str):
    hint = _HINTS[key]
    text = text.strip()
    try:
        if hint is bool:
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint is str:
            return text
        if hint == tuple[int, ...]:
            return tuple(int(v) for v in text.split(",") if v.strip())
        if hint == typing.Optional[int]:
            return None if text.lower() in ("", "none") else int(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc
    raise ConfigError(f"unsupported config type for {key}")


def serialize(config: ExperimentConfig) -> str:
    return "".join(f"{f.name} = {_format(getattr(config, f.name))}\n"
                   for f in dataclasses.fields(config))


def parse_pairs(pairs: typing.Iterable[tuple[str, str]], base: ExperimentConfig | None = None) -> ExperimentConfig:
    values = {}
    for key, text in pairs:
        key = key.strip()
        if key not in _HINTS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _convert(key, text)
    return (base or ExperimentConfig()).replace(**values)


def parse(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        pairs.append((key, value))
    return parse_pairs(pairs, base)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return parse(path.read_text())


def write_config(path, config: ExperimentConfig) -> None:
    Path(path).write_text(serialize(config))
