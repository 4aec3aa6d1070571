"""Run configuration: INI files with one section per module, plus flag overrides.

Precedence is defaults < file < flags. Unknown sections and keys are errors.
The resolved configuration is written back out in the same format so a run
can be repeated from its echo.
"""

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigurationError
from .losses import LossWeights
from .model import StripformerConfig
from .training import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    """Where training pairs come from: procedural synthesis or a paired folder."""

    synthetic: bool = True
    data_dir: str = ""
    pairs: int = 1
    size: int = 64
    data_seed: int = 0
    length_min: int = 3
    length_max: int = 9
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not self.synthetic and not self.data_dir:
            raise ConfigurationError("data.data_dir is required when data.synthetic is false")
        if self.pairs < 1 or self.size < 4:
            raise ConfigurationError("data.pairs must be >= 1 and data.size >= 4")
        if not 1 <= self.length_min <= self.length_max:
            raise ConfigurationError("need 1 <= data.length_min <= data.length_max")


@dataclass(frozen=True)
class RunConfig:
    model: StripformerConfig = field(default_factory=StripformerConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)


SECTIONS = {"model": StripformerConfig, "loss": LossWeights, "train": TrainConfig, "data": DataConfig}
# fields whose value may be ``none``, with the type of their other values
OPTIONAL = {("train", "crop"): int, ("model", "out_init_std"): float}


def _parse(section, key, text, default):
    text = text.strip()
    optional = OPTIONAL.get((section, key))
    if optional is not None and text.lower() == "none":
        return None
    try:
        if optional is not None:
            return optional(text)
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered not in configparser.ConfigParser.BOOLEAN_STATES:
                raise ValueError(text)
            return configparser.ConfigParser.BOOLEAN_STATES[lowered]
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as exc:
        raise ConfigurationError(f"[{section}] {key}: cannot parse {text!r}") from exc
    return text


def _format(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_config_file(path):
    """Parse ``path`` into ``{section: {key: typed value}}``, rejecting unknown names."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from exc
    out = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigurationError(f"unknown config section [{section}]")
        defaults = {f.name: f.default for f in fields(SECTIONS[section])}
        values = {}
        for key, text in parser.items(section):
            if key not in defaults:
                raise ConfigurationError(f"unknown config key {key!r} in section [{section}]")
            values[key] = _parse(section, key, text, defaults[key])
        out[section] = values
    return out


def resolve(path=None, overrides=None):
    """Build a :class:`RunConfig`; ``overrides`` maps ``"section.key"`` to values.

    ``None`` values are skipped; string values are parsed like file entries,
    so ``"none"`` clears an optional field.
    """
    values = read_config_file(path) if path else {}
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, key = dotted.split(".", 1)
        if section not in SECTIONS or key not in {f.name for f in fields(SECTIONS[section])}:
            raise ConfigurationError(f"unknown config key {dotted!r}")
        if isinstance(value, str):
            default = {f.name: f.default for f in fields(SECTIONS[section])}[key]
            value = _parse(section, key, value, default)
        values.setdefault(section, {})[key] = value
    try:
        parts = {name: cls(**values.get(name, {})) for name, cls in SECTIONS.items()}
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc
    return RunConfig(**parts)


def write_config(path, run: RunConfig):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name in SECTIONS:
        part = getattr(run, name)
        parser[name] = {f.name: _format(getattr(part, f.name)) for f in fields(part)}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        parser.write(fh)
