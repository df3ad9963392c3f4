"""Experiment configuration: YAML file plus command-line overrides (overrides win)."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml

from ..objectives import MODEL_KINDS, OBJECTIVES, TASKS, parse_grad_mode
from ..payoff import WEIGHT_MODES

SUITES = ("identities", "props", "sampler", "gradients")
REWARD_KINDS = ("neg_hamming", "neg_edit")


class ConfigError(ValueError):
    """Invalid configuration; maps to exit status 2."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _float_list(value) -> Tuple[float, ...]:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    elif not isinstance(value, (list, tuple)):
        value = [value]
    try:
        return tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a list of numbers, got {value!r}") from None


def _int_list(value) -> Tuple[int, ...]:
    floats = _float_list(value)
    if any(f != int(f) for f in floats):
        raise ConfigError(f"expected a list of integers, got {value!r}")
    return tuple(int(f) for f in floats)


def _str_list(value) -> Tuple[str, ...]:
    if isinstance(value, str):
        return tuple(v.strip() for v in value.split(",") if v.strip())
    return tuple(str(v) for v in value)


@dataclass(frozen=True)
class VerifyConfig:
    suite: str = "all"
    trials: int = 1000
    seed: int = 0
    draws: int = 1_000_000
    out: Optional[str] = None

    def __post_init__(self):
        _require(self.suite == "all" or self.suite in SUITES,
                 f"suite must be 'all' or one of {SUITES}, got {self.suite!r}")
        _require(1 <= self.trials <= 10**6, "trials must be in [1, 1e6]")
        _require(1 <= self.draws <= 10**7, "draws must be in [1, 1e7]")
        _require(self.seed >= 0, "seed must be non-negative")

    @property
    def suites(self) -> Tuple[str, ...]:
        return SUITES if self.suite == "all" else (self.suite,)


@dataclass(frozen=True)
class EditHistConfig:
    m: int = 20
    v: int = 61
    tau: Tuple[float, ...] = (0.6, 0.7, 0.8, 0.9)
    mode: str = "figure1"
    e_max: Optional[int] = None
    out: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "tau", _float_list(self.tau))
        _require(1 <= self.m <= 10**4, "m must be in [1, 1e4]")
        _require(self.v >= 2, "v must be >= 2")
        _require(self.tau and all(t > 0 for t in self.tau), "every tau must be > 0")
        _require(self.mode in WEIGHT_MODES, f"mode must be one of {WEIGHT_MODES}")
        if self.e_max is None:
            object.__setattr__(self, "e_max", 2 * self.m)
        _require(0 <= self.e_max <= 2 * self.m, "e_max must be in [0, 2m]")


@dataclass(frozen=True)
class PayoffConfig:
    target: str = ""
    vocab: str = "01"
    tau: float = 1.0
    len: Optional[int] = None
    up_to: bool = False
    reward: str = "neg_hamming"
    out: Optional[str] = None

    def __post_init__(self):
        _require(bool(self.target), "target must be non-empty")
        _require(len(self.vocab) >= 2 and len(set(self.vocab)) == len(self.vocab),
                 "vocab must list at least two distinct symbols")
        _require(set(self.target) <= set(self.vocab), "target uses symbols outside vocab")
        _require(self.tau >= 0, "tau must be >= 0")
        if self.len is None:
            object.__setattr__(self, "len", len(self.target))
        _require(self.len >= 1, "len must be >= 1")
        _require(self.reward in REWARD_KINDS, f"reward must be one of {REWARD_KINDS}")
        _require(self.up_to or self.reward != "neg_hamming" or self.len == len(self.target),
                 "neg_hamming needs --len equal to the target length")
        _require(not (self.up_to and self.reward == "neg_hamming"),
                 "variable-length spaces need reward neg_edit")


@dataclass(frozen=True)
class TrainConfig:
    task: str = "copy"
    method: Tuple[str, ...] = ("raml",)
    tau: Tuple[float, ...] = (1.0,)
    steps: int = 200
    lr: float = 1.0
    batch: int = 0
    grad: str = "exact"
    seeds: Tuple[int, ...] = (0,)
    v: int = 2
    length: int = 3
    model: str = "tabular"
    reward: str = "neg_hamming"
    init_scale: float = 0.0
    baseline: str = "0"
    literal_rl: bool = False
    timing: bool = False
    jobs: int = 1
    out: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "method", _str_list(self.method))
        object.__setattr__(self, "tau", _float_list(self.tau))
        object.__setattr__(self, "seeds", _int_list(self.seeds))
        _require(self.task in TASKS, f"task must be one of {TASKS}")
        _require(self.method and all(m in OBJECTIVES for m in self.method),
                 f"method must be drawn from {OBJECTIVES}")
        _require(self.tau and all(t >= 0 for t in self.tau), "every tau must be >= 0")
        _require(1 <= self.steps <= 10**6, "steps must be in [1, 1e6]")
        _require(self.lr > 0, "lr must be > 0")
        _require(self.batch >= 0, "batch must be >= 0")
        try:
            parse_grad_mode(self.grad)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        _require(bool(self.seeds) and all(s >= 0 for s in self.seeds), "seeds must be non-negative")
        _require(2 <= self.v <= 5 and 1 <= self.length <= 4, "need 2 <= v <= 5 and 1 <= length <= 4")
        _require(self.model in MODEL_KINDS, f"model must be one of {MODEL_KINDS}")
        _require(self.reward in REWARD_KINDS, f"reward must be one of {REWARD_KINDS}")
        _require(self.init_scale >= 0, "init_scale must be >= 0")
        _require(self.jobs >= 1, "jobs must be >= 1")
        if self.baseline != "mean":
            try:
                float(self.baseline)
            except ValueError:
                raise ConfigError("baseline must be a number or 'mean'") from None

    @property
    def baseline_value(self):
        return "mean" if self.baseline == "mean" else float(self.baseline)


COMMANDS = {
    "verify": VerifyConfig,
    "edit-hist": EditHistConfig,
    "payoff": PayoffConfig,
    "train": TrainConfig,
}


def load_file(path: str | Path) -> Dict[str, Any]:
    """Read a UTF-8 YAML mapping."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping")
    return data


def build(command: str, file_values: Mapping[str, Any] | None = None,
          overrides: Mapping[str, Any] | None = None):
    """Merge file values (flat, or nested under the command name) with overrides.

    Unknown keys raise :class:`ConfigError`.
    """
    cls = COMMANDS[command]
    known = {f.name for f in dataclasses.fields(cls)}
    merged: Dict[str, Any] = {}
    file_values = dict(file_values or {})
    section = file_values.pop(command, None)
    for other in COMMANDS:
        file_values.pop(other, None)
    for source in (file_values, section or {}):
        if not isinstance(source, dict):
            raise ConfigError(f"section {command!r} must be a mapping")
        for key, value in source.items():
            key = str(key).replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {key!r} for {command}")
            merged[key] = value
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    try:
        return cls(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
