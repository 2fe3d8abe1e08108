"""INI experiment configuration.

Sections and keys (defaults in brackets)::

    [data]      kind, plus the keyword arguments of the matching generator
    [model]     hidden (comma list) [1], activation [selu], init_scale [1.0]
    [growth]    grower [tiny]  tiny | gradmax | random | completed_tiny
                normalization [none], amplitude [sqrt], line_search [true]
                bound [4.0], interval [positive], delta_t [1]
                neurons_per_addition [1], target_widths (comma list, optional)
                positions (comma list or "all") [all], max_additions [20]
                target_train_loss [0], estimation_coeff [1.0]
                random_distribution [gaussian]
    [train]     lr [0.01], batch_size [32], initial_epochs [0]
    [run]       name [run], seed [0], seeds (comma list, optional), out [runs]
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import GrowError
from ..growth import NormalizationMode

GROWERS = ("tiny", "gradmax", "random", "completed_tiny")


class ConfigError(GrowError):
    """The configuration file is missing, malformed or inconsistent."""


@dataclass
class ExperimentConfig:
    data_kind: str = "regression"
    data_params: dict = field(default_factory=dict)
    hidden: tuple[int, ...] = (1,)
    activation: str = "selu"
    init_scale: float = 1.0
    grower: str = "tiny"
    normalization: str = "none"
    amplitude: str = "sqrt"
    line_search: bool = True
    bound: float = 4.0
    interval: str = "positive"
    delta_t: int = 1
    neurons_per_addition: int = 1
    target_widths: tuple[int, ...] | None = None
    positions: tuple[int, ...] | None = None
    max_additions: int = 20
    target_train_loss: float = 0.0
    estimation_coeff: float = 1.0
    random_distribution: str = "gaussian"
    lr: float = 0.01
    batch_size: int = 32
    initial_epochs: int = 0
    name: str = "run"
    seed: int = 0
    seeds: tuple[int, ...] | None = None
    out: str = "runs"

    def validate(self) -> "ExperimentConfig":
        if self.grower not in GROWERS:
            raise ConfigError(f"grower must be one of {GROWERS}, got {self.grower!r}")
        try:
            mode = NormalizationMode(self.normalization)
        except ValueError as exc:
            raise ConfigError(f"unknown normalization {self.normalization!r}") from exc
        gradmax_modes = (NormalizationMode.GRADMAX_LINEAR, NormalizationMode.GRADMAX_SQRT)
        if mode in gradmax_modes and self.grower != "gradmax":
            raise ConfigError("gradmax normalizations require the gradmax grower")
        if self.amplitude not in ("sqrt", "linear"):
            raise ConfigError("amplitude must be sqrt or linear")
        if self.interval not in ("positive", "symmetric"):
            raise ConfigError("interval must be positive or symmetric")
        counts = [self.delta_t, self.neurons_per_addition, self.batch_size, self.max_additions]
        if any(c <= 0 for c in counts) or any(h <= 0 for h in self.hidden):
            raise ConfigError("counts and widths must be positive")
        if self.lr < 0 or self.bound <= 0 or self.initial_epochs < 0:
            raise ConfigError("lr must be >= 0, bound > 0, initial_epochs >= 0")
        if self.target_widths is not None and len(self.target_widths) != len(self.hidden):
            raise ConfigError("target_widths needs one entry per hidden layer")
        return self


def _ints(value: str) -> tuple[int, ...]:
    return tuple(int(v) for v in value.replace(" ", "").split(",") if v)


def _data_value(value: str):
    from .data import _coerce

    return _coerce(value)


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_parser(parser)


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    return config_from_parser(parser)


def config_from_parser(parser: configparser.ConfigParser) -> ExperimentConfig:
    cfg = ExperimentConfig()
    known = {"data", "model", "growth", "train", "run"}
    extra = set(parser.sections()) - known
    if extra:
        raise ConfigError(f"unknown sections: {sorted(extra)}")
    try:
        if parser.has_section("data"):
            sec = dict(parser["data"])
            cfg.data_kind = sec.pop("kind", cfg.data_kind)
            cfg.data_params = {k: _data_value(v) for k, v in sec.items()}
        if parser.has_section("model"):
            m = parser["model"]
            cfg.hidden = _ints(m.get("hidden", "1"))
            cfg.activation = m.get("activation", cfg.activation)
            cfg.init_scale = m.getfloat("init_scale", cfg.init_scale)
        if parser.has_section("growth"):
            g = parser["growth"]
            cfg.grower = g.get("grower", cfg.grower)
            cfg.normalization = g.get("normalization", cfg.normalization)
            cfg.amplitude = g.get("amplitude", cfg.amplitude)
            cfg.line_search = g.getboolean("line_search", cfg.line_search)
            cfg.bound = g.getfloat("bound", cfg.bound)
            cfg.interval = g.get("interval", cfg.interval)
            cfg.delta_t = g.getint("delta_t", cfg.delta_t)
            cfg.neurons_per_addition = g.getint("neurons_per_addition", cfg.neurons_per_addition)
            if "target_widths" in g:
                cfg.target_widths = _ints(g["target_widths"])
            pos = g.get("positions", "all")
            cfg.positions = None if pos.strip() == "all" else _ints(pos)
            cfg.max_additions = g.getint("max_additions", cfg.max_additions)
            cfg.target_train_loss = g.getfloat("target_train_loss", cfg.target_train_loss)
            cfg.estimation_coeff = g.getfloat("estimation_coeff", cfg.estimation_coeff)
            cfg.random_distribution = g.get("random_distribution", cfg.random_distribution)
        if parser.has_section("train"):
            t = parser["train"]
            cfg.lr = t.getfloat("lr", cfg.lr)
            cfg.batch_size = t.getint("batch_size", cfg.batch_size)
            cfg.initial_epochs = t.getint("initial_epochs", cfg.initial_epochs)
        if parser.has_section("run"):
            r = parser["run"]
            cfg.name = r.get("name", cfg.name)
            cfg.seed = r.getint("seed", cfg.seed)
            if "seeds" in r:
                cfg.seeds = _ints(r["seeds"])
            cfg.out = r.get("out", cfg.out)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()
