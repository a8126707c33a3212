"""Flat ``key = value`` pipeline configuration.

Keys are dotted (``flow.levels``, ``synth.intubation.brightness``); every
module default can be overridden, unknown keys are rejected and values are
type-checked against the defaults. A single global ``seed`` drives every
random stream in the pipeline.

Example file::

    # small, fast corpus
    seed = 1
    synth.n_videos = 8
    synth.total_frames = 400
    tcn.epochs = 5
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .flow import FlowParams
from .frameclf import TrainConfig
from .motion import MotionParams
from .synth import PhaseAppearance, SynthConfig
from .tcn import TcnConfig

METHODS = ("a", "b", "c", "d", "e")
FLOW_SOURCES = ("synth", "files", "estimate")


class ConfigError(ValueError):
    """Malformed configuration file or invalid value."""


@dataclass(frozen=True)
class EvalParams:
    fps: float = 30.0
    methods: tuple = ("d",)
    plots: int = 3  # number of videos that get a cumulative-signal SVG

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValueError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")
        if self.plots < 0:
            raise ValueError("plots must be >= 0")


@dataclass(frozen=True)
class PipelineParams:
    work_dir: str = "work"
    corpus_dir: str = ""  # empty: synthesize into <work_dir>/corpus
    flow_source: str = "synth"
    threads: int = 1

    def __post_init__(self):
        if self.flow_source not in FLOW_SOURCES:
            raise ValueError(f"flow_source must be one of {FLOW_SOURCES}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


_VOLATILE = {"pipeline.work_dir", "pipeline.threads"}

# namespace -> (dataclass, fields that are not user-settable)
_SECTIONS = {
    "synth": (SynthConfig, {"seed"}),
    "flow": (FlowParams, set()),
    "motion": (MotionParams, set()),
    "frameclf": (TrainConfig, {"seed"}),
    "tcn": (TcnConfig, {"seed", "classes"}),
    "eval": (EvalParams, set()),
    "pipeline": (PipelineParams, set()),
}


def _flatten(obj, prefix: str, skip=()) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        if f.name in skip:
            continue
        value = getattr(obj, f.name)
        key = f"{prefix}.{f.name}"
        if dataclasses.is_dataclass(value):
            out.update(_flatten(value, key))
        else:
            out[key] = value
    return out


def default_values() -> dict:
    """Every settable key with its default value."""
    out = {"seed": 0}
    for name, (cls, skip) in _SECTIONS.items():
        out.update(_flatten(cls(), name, skip))
    return out


def _parse_value(key: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t for t in text.replace(",", " ").split() if t]
            if default and isinstance(default[0], int):
                parsed = tuple(int(t) for t in items)
                if len(parsed) != len(default):
                    raise ValueError(text)
                return parsed
            return tuple(items)
        return text
    except ValueError:
        kind = type(default).__name__
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from None


def _check_type(key: str, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, tuple):
        ok = isinstance(value, (tuple, list))
        value = tuple(value) if ok else value
    else:
        ok = isinstance(value, str)
    if not ok:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")
    return value


@dataclass(frozen=True)
class PipelineConfig:
    values: dict = field(default_factory=default_values)

    # construction

    @classmethod
    def from_overrides(cls, overrides: dict | None = None) -> "PipelineConfig":
        defaults = default_values()
        values = dict(defaults)
        for key, value in (overrides or {}).items():
            if key not in defaults:
                raise ConfigError(f"unknown configuration key {key!r}")
            if isinstance(value, str) and not isinstance(defaults[key], str):
                value = _parse_value(key, value, defaults[key])
            values[key] = _check_type(key, value, defaults[key])
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def parse(cls, text: str) -> "PipelineConfig":
        overrides = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            key = key.strip()
            if key in overrides:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            overrides[key] = value.strip()
        return cls.from_overrides(overrides)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    def replace(self, **overrides) -> "PipelineConfig":
        """Override keys given with ``__`` in place of dots, e.g. ``synth__n_videos=4``."""
        merged = {k: v for k, v in self.values.items()}
        merged.update({k.replace("__", "."): v for k, v in overrides.items()})
        return PipelineConfig.from_overrides(merged)

    def dumps(self) -> str:
        lines = []
        for key in sorted(self.values):
            value = self.values[key]
            if isinstance(value, tuple):
                value = " ".join(map(str, value))
            elif isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    # typed views

    def validate(self) -> None:
        try:
            for name in _SECTIONS:
                self.section(name)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def _kwargs(self, prefix: str) -> dict:
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.values.items() if k.startswith(prefix + ".")}

    def section(self, name: str):
        cls, skip = _SECTIONS[name]
        kwargs = self._kwargs(name)
        if name == "synth":
            for phase in ("intubation", "withdrawal"):
                sub = {k.split(".", 1)[1]: kwargs.pop(k) for k in list(kwargs) if k.startswith(phase + ".")}
                kwargs[phase] = PhaseAppearance(**sub)
        if "seed" in skip:
            kwargs["seed"] = self.seed
        return cls(**kwargs)

    @property
    def synth(self) -> SynthConfig:
        return self.section("synth")

    @property
    def flow(self) -> FlowParams:
        return self.section("flow")

    @property
    def motion(self) -> MotionParams:
        return self.section("motion")

    @property
    def frameclf(self) -> TrainConfig:
        return self.section("frameclf")

    @property
    def tcn(self) -> TcnConfig:
        return self.section("tcn")

    @property
    def eval(self) -> EvalParams:
        return self.section("eval")

    @property
    def pipeline(self) -> PipelineParams:
        return self.section("pipeline")

    def digest(self, *prefixes: str) -> str:
        """SHA-256 over the seed and the keys under ``prefixes`` (all keys if none).

        Keys that cannot change results (work directory, thread count) are excluded.
        """
        keys = sorted(
            k for k in self.values
            if k not in _VOLATILE
            and (not prefixes or k == "seed" or any(k == p or k.startswith(p + ".") for p in prefixes))
        )
        blob = json.dumps({k: self.values[k] for k in keys}, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()
