"""Run configuration: dataclasses, flat key=value file format, overrides.

Config files are INI-style with one section per pipeline component. Every
field has a default, unknown sections or keys are rejected by name, and the
snapshot written at run start parses back to an identical configuration.
"""

import configparser
import copy
import dataclasses
import typing
from typing import Dict, List, Optional, Tuple

from .data import SyntheticSpec
from .errors import ConfigError
from .evidence import Stage1Config
from .fusion import FusionConfig
from .gnn import Stage2Config

VARIANTS = ("full", "no_uncertainty", "no_cross_fusion", "no_two_stage")


@dataclasses.dataclass
class GraphConfig:
    k_candidates: Tuple[int, ...] = (7, 11, 15, 19, 23)
    warmup_epochs: int = 30

    def validate(self) -> None:
        if not self.k_candidates:
            raise ConfigError("graph k_candidates must not be empty")
        if any(k < 1 for k in self.k_candidates):
            raise ConfigError("graph k_candidates must be positive")
        if self.warmup_epochs < 1:
            raise ConfigError("graph warmup_epochs must be >= 1")


@dataclasses.dataclass
class CvConfig:
    n_folds: int = 5

    def validate(self) -> None:
        if self.n_folds < 2:
            raise ConfigError("cv n_folds must be >= 2")


@dataclasses.dataclass
class RunConfig:
    seed: int = 0
    variant: str = "full"
    dataset_dir: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None
    stage1: Stage1Config = dataclasses.field(default_factory=Stage1Config)
    fusion: FusionConfig = dataclasses.field(default_factory=FusionConfig)
    stage2: Stage2Config = dataclasses.field(default_factory=Stage2Config)
    graph: GraphConfig = dataclasses.field(default_factory=GraphConfig)
    cv: CvConfig = dataclasses.field(default_factory=CvConfig)
    grid: Dict[str, List[str]] = dataclasses.field(default_factory=dict)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        self.stage1.validate()
        self.fusion.validate()
        self.stage2.validate()
        self.graph.validate()
        self.cv.validate()

    def copy(self) -> "RunConfig":
        return copy.deepcopy(self)


_SECTIONS = {
    "stage1": "stage1",
    "fusion": "fusion",
    "stage2": "stage2",
    "graph": "graph",
    "cv": "cv",
}
_RUN_KEYS = ("seed", "variant", "dataset_dir")


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"config key {key}: expected a boolean, got {raw!r}")


def _coerce(raw: str, field_type, key: str):
    origin = typing.get_origin(field_type)
    if origin is typing.Union:  # Optional[...]
        args = [a for a in typing.get_args(field_type) if a is not type(None)]
        return _coerce(raw, args[0], key)
    if origin is tuple:
        elem = typing.get_args(field_type)[0]
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return tuple(_coerce(p, elem, key) for p in parts)
    try:
        if field_type is int:
            return int(raw)
        if field_type is float:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key}: {exc}") from exc
    if field_type is bool:
        return _parse_bool(raw, key)
    if field_type is str:
        return raw.strip()
    raise ConfigError(f"config key {key}: unsupported field type {field_type}")


def _apply_to_dataclass(obj, key: str, raw: str, section: str):
    fields = {f.name: f for f in dataclasses.fields(obj)}
    if key not in fields:
        raise ConfigError(f"unknown config key [{section}] {key}")
    setattr(obj, key, _coerce(raw, fields[key].type, f"[{section}] {key}"))


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    read = parser.read(str(path))
    if not read:
        raise ConfigError(f"config file not found: {path}")
    config = RunConfig()
    for section in parser.sections():
        if section == "run":
            for key, raw in parser.items(section):
                if key not in _RUN_KEYS:
                    raise ConfigError(f"unknown config key [run] {key}")
                _apply_to_dataclass(config, key, raw, "run")
        elif section == "synthetic":
            spec_kwargs = {}
            spec_fields = {f.name: f for f in dataclasses.fields(SyntheticSpec)}
            for key, raw in parser.items(section):
                if key not in spec_fields:
                    raise ConfigError(f"unknown config key [synthetic] {key}")
                spec_kwargs[key] = _coerce(raw, spec_fields[key].type, f"[synthetic] {key}")
            try:
                config.synthetic = SyntheticSpec(**spec_kwargs)
            except Exception as exc:
                raise ConfigError(f"[synthetic] section invalid: {exc}") from exc
        elif section == "grid":
            for key, raw in parser.items(section):
                values = [p.strip() for p in raw.split(",") if p.strip()]
                if not values:
                    raise ConfigError(f"config key [grid] {key}: empty value list")
                config.grid[key] = values
        elif section in _SECTIONS:
            target = getattr(config, _SECTIONS[section])
            for key, raw in parser.items(section):
                _apply_to_dataclass(target, key, raw, section)
        else:
            raise ConfigError(f"unknown config section [{section}]")
    config.validate()
    return config


def set_value(config: RunConfig, dotted_key: str, raw: str) -> None:
    """Apply one `section.key = raw` override in place; unknown keys rejected."""
    if "." not in dotted_key:
        if dotted_key in _RUN_KEYS:
            _apply_to_dataclass(config, dotted_key, raw, "run")
            return
        raise ConfigError(f"unknown config key {dotted_key}")
    section, key = dotted_key.split(".", 1)
    if section == "run":
        if key not in _RUN_KEYS:
            raise ConfigError(f"unknown config key [run] {key}")
        _apply_to_dataclass(config, key, raw, "run")
    elif section == "synthetic":
        if config.synthetic is None:
            raise ConfigError("cannot override [synthetic]: no synthetic section configured")
        spec_fields = {f.name: f for f in dataclasses.fields(SyntheticSpec)}
        if key not in spec_fields:
            raise ConfigError(f"unknown config key [synthetic] {key}")
        kwargs = dataclasses.asdict(config.synthetic)
        kwargs[key] = _coerce(raw, spec_fields[key].type, f"[synthetic] {key}")
        try:
            config.synthetic = SyntheticSpec(**kwargs)
        except Exception as exc:
            raise ConfigError(f"[synthetic] override invalid: {exc}") from exc
    elif section in _SECTIONS:
        _apply_to_dataclass(getattr(config, _SECTIONS[section]), key, raw, section)
    else:
        raise ConfigError(f"unknown config section [{section}]")


def write_config(config: RunConfig, path) -> None:
    """Write a snapshot that load_config parses back to an equal RunConfig."""
    lines: List[str] = ["[run]", f"seed = {config.seed}", f"variant = {config.variant}"]
    if config.dataset_dir is not None:
        lines.append(f"dataset_dir = {config.dataset_dir}")
    if config.synthetic is not None:
        lines.append("")
        lines.append("[synthetic]")
        for f in dataclasses.fields(SyntheticSpec):
            lines.append(f"{f.name} = {_format_value(getattr(config.synthetic, f.name))}")
    for section, attr in _SECTIONS.items():
        lines.append("")
        lines.append(f"[{section}]")
        obj = getattr(config, attr)
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
    if config.grid:
        lines.append("")
        lines.append("[grid]")
        for key in sorted(config.grid):
            lines.append(f"{key} = {','.join(config.grid[key])}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
