"""Run configuration: INI-style ``[section]`` files mapped onto the param dataclasses.

Sections are ``[detector]``, ``[filter]``, ``[flow]``, ``[ecg]``, ``[scene]``
and ``[io]``. Keys not known to a section are rejected. Every default is the
tuned value used throughout the package.
"""
from __future__ import annotations

import configparser
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidParameterError
from .filter import FilterParams
from .flow import FlowParams
from .likelihood import SyntheticDetectorConfig
from .simgen import SceneConfig


@dataclass(frozen=True)
class ECGConfig:
    """Live ECG block length (in frames of acquisition) and match settings."""

    buffer_frames: int = 12
    frame_rate: float = 15.0
    min_score: float | None = None

    def __post_init__(self):
        if self.buffer_frames < 1:
            raise InvalidParameterError("buffer_frames must be positive")
        if not self.frame_rate > 0:
            raise InvalidParameterError("frame_rate must be positive")


@dataclass(frozen=True)
class IOConfig:
    pgm_bits: int = 16
    preprocess: bool = True
    target_size: int = 256
    write_overlays: bool = True
    library_cycle: int = 1

    def __post_init__(self):
        if self.pgm_bits not in (8, 16):
            raise InvalidParameterError("pgm_bits must be 8 or 16")
        if self.target_size < 16:
            raise InvalidParameterError("target_size must be at least 16")


@dataclass(frozen=True)
class DetectorSection(SyntheticDetectorConfig):
    """Detector emulation plus the detection-loss weight."""

    loss_lambda: float = 10.0

    def detector(self) -> SyntheticDetectorConfig:
        d = dataclasses.asdict(self)
        d.pop("loss_lambda")
        return SyntheticDetectorConfig(**d)


SECTIONS = {
    "detector": DetectorSection,
    "filter": FilterParams,
    "flow": FlowParams,
    "ecg": ECGConfig,
    "scene": SceneConfig,
    "io": IOConfig,
}

# Fields whose value may be absent, and the type used when present.
_OPTIONAL = {"flow_roi_margin": int, "min_score": float}


@dataclass(frozen=True)
class RunConfig:
    detector: DetectorSection = field(default_factory=DetectorSection)
    filter: FilterParams = field(default_factory=FilterParams)
    flow: FlowParams = field(default_factory=FlowParams)
    ecg: ECGConfig = field(default_factory=ECGConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    io: IOConfig = field(default_factory=IOConfig)

    def to_dict(self) -> dict:
        return {name: _section_dict(getattr(self, name)) for name in SECTIONS}

    def to_ini(self) -> str:
        lines = []
        for name, values in self.to_dict().items():
            lines.append(f"[{name}]")
            lines += [f"{k} = {_format(v)}" for k, v in values.items()]
            lines.append("")
        return "\n".join(lines)

    def replace(self, section: str, **changes) -> RunConfig:
        current = getattr(self, section)
        return dataclasses.replace(self, **{section: dataclasses.replace(current, **changes)})


def _section_dict(obj) -> dict:
    d = dataclasses.asdict(obj)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = [list(x) if isinstance(x, tuple) else x for x in v]
    return d


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        if v and isinstance(v[0], list):
            return ";".join(f"{a}-{b}" for a, b in v)
        return ",".join(str(x) for x in v)
    return str(v)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_value(name: str, default, text: str):
    t = text.strip()
    if name in _OPTIONAL:
        return None if t.lower() in ("none", "") else _OPTIONAL[name](t)
    if name == "contrast_episodes":
        if not t:
            return ()
        return tuple(tuple(int(x) for x in part.split("-")) for part in t.split(";") if part.strip())
    if isinstance(default, bool):
        return _parse_bool(t)
    if isinstance(default, int):
        return int(t)
    if isinstance(default, float):
        return float(t)
    if isinstance(default, tuple):
        return tuple(int(x) for x in t.split(","))
    return t


def _build(section: str, values: dict[str, str]):
    cls = SECTIONS[section]
    defaults = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, text in values.items():
        if key not in defaults:
            raise InvalidParameterError(f"unknown key {key!r} in section [{section}]")
        f = defaults[key]
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        try:
            kwargs[key] = _parse_value(key, default, text)
        except ValueError as exc:
            raise InvalidParameterError(f"[{section}] {key}: {exc}") from exc
    return cls(**kwargs)


def parse_config(text: str = "", overrides: dict[str, dict[str, str]] | None = None) -> RunConfig:
    """Parse INI text, then apply ``overrides[section][key] = text``."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InvalidParameterError(f"malformed config: {exc}") from exc
    raw: dict[str, dict[str, str]] = {name: {} for name in SECTIONS}
    for section in cp.sections():
        if section not in SECTIONS:
            raise InvalidParameterError(f"unknown config section [{section}]")
        raw[section].update(cp[section])
    for section, values in (overrides or {}).items():
        if section not in SECTIONS:
            raise InvalidParameterError(f"unknown config section [{section}]")
        raw[section].update({k: str(v) for k, v in values.items()})
    return RunConfig(**{name: _build(name, raw[name]) for name in SECTIONS})


def load_config(path=None, overrides: dict[str, dict[str, str]] | None = None) -> RunConfig:
    """Read a config file, or the ``config`` entry of a run manifest (``.json``)."""
    if path is None:
        return parse_config("", overrides)
    p = Path(path)
    text = p.read_text()
    if p.suffix == ".json":
        try:
            text = json.loads(text)["config_ini"]
        except (ValueError, KeyError) as exc:
            raise InvalidParameterError(f"{p} is not a run manifest") from exc
    return parse_config(text, overrides)
