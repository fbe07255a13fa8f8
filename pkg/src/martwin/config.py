"""Flat key=value configuration with dotted section keys.

Every generator, labeling, map, radio, twin, and sim field is addressable as
`section.field` (e.g. `radio.epsilon=0.9`), either from a config file or from
repeated `--set` CLI overrides.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

from .mapgraph import CullConfig
from .reservation import RadioConfig, RBSpec
from .trace import GeneratorConfig, LabelingConfig


class ConfigError(ValueError):
    """Invalid configuration key, value, or combination."""


@dataclass(frozen=True)
class TwinSection:
    """Twin-side knobs: switching, stats averaging, experience, refitting."""

    switch_threshold: float = 4.0   # count-jump trigger for the detailed model
    switch_patience: int = 3        # calm slots before falling back
    window_slots: int = 5           # count window length of the simplified model
    ewma_beta: float = 0.9
    capacity: int = 2000
    refit_every: int = 50
    epochs: int = 300
    lr: float = 0.05
    force_model: str = "auto"       # auto | detailed | simplified
    stats_mode: str = "ewma"        # ewma | pinned (pin to rates measured over the run)

    def validate(self) -> None:
        if self.switch_threshold < 0:
            raise ConfigError("twin.switch_threshold must be >= 0")
        if self.switch_patience < 1:
            raise ConfigError("twin.switch_patience must be >= 1")
        if self.window_slots < 1:
            raise ConfigError("twin.window_slots must be >= 1")
        if not 0.0 < self.ewma_beta < 1.0:
            raise ConfigError("twin.ewma_beta must lie in (0, 1)")
        if self.capacity < 1 or self.refit_every < 1 or self.epochs < 1:
            raise ConfigError("twin.capacity, refit_every, and epochs must be >= 1")
        if self.force_model not in ("auto", "detailed", "simplified"):
            raise ConfigError("twin.force_model must be auto, detailed, or simplified")
        if self.stats_mode not in ("ewma", "pinned"):
            raise ConfigError("twin.stats_mode must be ewma or pinned")


@dataclass(frozen=True)
class SimSection:
    """Simulation-loop knobs."""

    warmup_slots: int = 20          # persistence-predicted slots excluded from metrics
    seed: int = 0                   # model initialization seed
    trace: str = ""                 # JSON-lines trace path; empty = use the generator
    max_slots: int = 0              # truncate the slot sequence; 0 = run everything
    baseline_refit_every: int = 200
    recurrent_hidden: int = 4
    recurrent_epochs: int = 150

    def validate(self) -> None:
        if self.warmup_slots < 1:
            raise ConfigError("sim.warmup_slots must be >= 1")
        if self.max_slots < 0:
            raise ConfigError("sim.max_slots must be >= 0")
        if self.baseline_refit_every < 1:
            raise ConfigError("sim.baseline_refit_every must be >= 1")
        if self.recurrent_hidden < 1 or self.recurrent_epochs < 1:
            raise ConfigError("sim.recurrent_hidden and recurrent_epochs must be >= 1")


@dataclass(frozen=True)
class SimConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    labeling: LabelingConfig = field(default_factory=LabelingConfig)
    map: CullConfig = field(default_factory=CullConfig)
    radio: RadioConfig = field(default_factory=RadioConfig)
    rb: RBSpec = field(default_factory=RBSpec)
    twin: TwinSection = field(default_factory=TwinSection)
    sim: SimSection = field(default_factory=SimSection)

    def validate(self) -> None:
        try:
            self.generator.validate()
            self.labeling.validate()
            self.map.validate()
            self.radio.validate()
            self.rb.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.twin.validate()
        self.sim.validate()
        if not self.sim.trace and self.generator.frames_per_slot != self.radio.frames_per_slot:
            raise ConfigError(
                f"generator.frames_per_slot ({self.generator.frames_per_slot}) must match "
                f"radio.frames_per_slot ({self.radio.frames_per_slot})"
            )


_SECTIONS = ("generator", "labeling", "map", "radio", "rb", "twin", "sim")


def _coerce(raw: str, target_type, key: str):
    raw = raw.strip()
    if target_type is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if target_type is int:
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from exc
    if target_type is float:
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from exc
    return raw


def set_key(cfg: SimConfig, key: str, raw_value: str) -> SimConfig:
    """Return a config with `section.field` replaced by the coerced value."""
    if "." not in key:
        raise ConfigError(f"config key {key!r} must look like section.field")
    section, fname = key.split(".", 1)
    if section not in _SECTIONS:
        raise ConfigError(f"unknown config section {section!r}")
    sub = getattr(cfg, section)
    fields = {f.name: f for f in dataclasses.fields(sub)}
    if fname not in fields:
        raise ConfigError(f"unknown config key {key!r}")
    current = getattr(sub, fname)
    target_type = type(current) if current is not None else str
    value = _coerce(raw_value, target_type, key)
    return replace(cfg, **{section: replace(sub, **{fname: value})})


def parse_config(path) -> SimConfig:
    """Parse a key=value config file ('#' starts a comment, blank lines ignored)."""
    cfg = SimConfig()
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        cfg = set_key(cfg, key.strip(), value)
    return cfg


def apply_overrides(cfg: SimConfig, overrides) -> SimConfig:
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.field=value")
        key, value = item.split("=", 1)
        cfg = set_key(cfg, key.strip(), value)
    return cfg


def dump_config(cfg: SimConfig) -> str:
    """Render the full configuration in the key=value file format."""
    lines = []
    for section in _SECTIONS:
        sub = getattr(cfg, section)
        for f in dataclasses.fields(sub):
            lines.append(f"{section}.{f.name}={getattr(sub, f.name)}")
    return "\n".join(lines) + "\n"
