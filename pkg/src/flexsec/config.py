"""INI configuration with environment and command-line overrides.

Precedence, lowest first: dataclass defaults, the ``--config`` file,
``FLEXSEC_<SECTION>__<KEY>`` environment variables, explicit CLI flags.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
import typing
from dataclasses import dataclass, field

from .channel import SimConfig
from .classical import SolverConfig
from .gnn import ModelConfig
from .training import TrainConfig

ENV_PREFIX = "FLEXSEC_"
METHODS = ("gnn-csi", "gnn-distance", "classical", "hd", "max-power")


class ConfigError(ValueError):
    """Unknown section or key, unparsable value, or an invalid combination."""


@dataclass
class ExperimentConfig:
    n_pairs: tuple = (2, 4, 8)
    n_eves: tuple = (2, 4)
    n_test: int = 1000
    test_seed: int = 555_000
    methods: tuple = METHODS
    timing_runs: int = 20
    timing_n_pairs: tuple = (2, 4, 8, 16, 32)
    timing_n_eves: tuple = (2, 4, 8, 16)
    timing_fixed_n_pairs: int = 4
    timing_fixed_n_eves: int = 2
    workers: int = 1
    out: str = "runs"

    def __post_init__(self):
        for name in ("n_pairs", "n_eves", "methods", "timing_n_pairs", "timing_n_eves"):
            setattr(self, name, tuple(getattr(self, name)))
            if not getattr(self, name):
                raise ValueError(f"experiment.{name} must be nonempty")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}; choose from {METHODS}")
        if self.n_test < 1 or self.timing_runs < 1 or self.workers < 1:
            raise ValueError("n_test, timing_runs and workers must be at least 1")
        if min(self.n_pairs + self.n_eves) < 1:
            raise ValueError("grid cells need at least one pair and one eavesdropper")

    def cells(self):
        return [(n, k) for n in self.n_pairs for k in self.n_eves]


@dataclass
class Config:
    sim: SimConfig = field(default_factory=SimConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def to_dict(self):
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def digest(self):
        """Short SHA-256 of the canonical JSON form; identifies generated artifacts."""
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


SECTIONS = {"sim": SimConfig, "solver": SolverConfig, "model": ModelConfig,
            "train": TrainConfig, "experiment": ExperimentConfig}


def _coerce(cls, key, raw):
    hints = typing.get_type_hints(cls)
    if key not in hints:
        raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
    default = next(f for f in dataclasses.fields(cls) if f.name == key).default
    kind = type(default) if default is not None else float
    text = str(raw).strip()
    try:
        if kind is tuple:
            items = [s.strip() for s in text.split(",") if s.strip()]
            sample = default[0] if default else ""
            return tuple(int(s) if isinstance(sample, int) else s for s in items)
        if kind is bool:
            if text.lower() not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("1", "true", "yes")
        if text.lower() == "none" and default is None:
            return None
        return kind(text)
    except ValueError as exc:
        raise ConfigError(f"{cls.__name__}.{key}: cannot parse {text!r} as {kind.__name__}") from exc


def _apply(values, section, key, raw):
    if section not in SECTIONS:
        raise ConfigError(f"unknown section [{section}]; expected one of {sorted(SECTIONS)}")
    values[section][key] = _coerce(SECTIONS[section], key, raw)


def env_overrides(environ=None):
    """``FLEXSEC_TRAIN__EPOCHS=5`` becomes ``("train", "epochs", "5")``."""
    environ = os.environ if environ is None else environ
    out = []
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        section, key = name[len(ENV_PREFIX):].lower().split("__", 1)
        out.append((section, key, raw))
    return sorted(out)


def load_config(path=None, environ=None, overrides=()):
    """Build a :class:`Config`; ``overrides`` is a sequence of (section, key, value)."""
    values = {name: {} for name in SECTIONS}
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from exc
        for section in parser.sections():
            for key, raw in parser.items(section):
                _apply(values, section, key, raw)
    for section, key, raw in env_overrides(environ):
        _apply(values, section, key, raw)
    for section, key, raw in overrides:
        if raw is not None:
            _apply(values, section, key, raw)
    try:
        return Config(**{name: cls(**values[name]) for name, cls in SECTIONS.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def write_config(cfg: Config, path):
    parser = configparser.ConfigParser()
    for name, body in cfg.to_dict().items():
        parser[name] = {k: ",".join(map(str, v)) if isinstance(v, (list, tuple)) else str(v)
                        for k, v in body.items()}
    with open(path, "w") as fh:
        parser.write(fh)
