"""Flat key = value run configuration.

Example:

    # staircase run
    m = 3
    beta = 1.1
    refinement_p = 3
    dt = auto          # or a float; auto = min(0.25 delta^2, cfl-limited)
    t_end = 0.5
    ic.kind = streamfunction-swirl
    ic.amplitude = 0.5
    out_dir = out/run1

Unknown keys are rejected with the offending line number.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

IC_KINDS = ("zero", "swirl-only", "streamfunction-swirl")

# config key -> (attribute, parser)
_BOOLISH = {"true": True, "false": False}


def _parse_dt(s: str):
    if s == "auto":
        return "auto"
    return float(s)


_KEYS = {
    "m": ("m", int),
    "beta": ("beta", float),
    "refinement_p": ("refinement_p", int),
    "dt": ("dt", _parse_dt),
    "t_end": ("t_end", float),
    "cfl": ("cfl", float),
    "picard_max": ("picard_max", int),
    "picard_tol": ("picard_tol", float),
    "ic.kind": ("ic_kind", str),
    "ic.amplitude": ("ic_amplitude", float),
    "output_stride": ("output_stride", int),
    "snapshot_stride": ("snapshot_stride", int),
    "out_dir": ("out_dir", str),
    "seed": ("seed", int),
}


@dataclass
class RunConfig:
    m: int = 3
    beta: float = 1.1
    refinement_p: int = 3
    dt: object = "auto"
    t_end: float = 0.5
    cfl: float = 0.5
    picard_max: int = 3
    picard_tol: float = 1e-8
    ic_kind: str = "streamfunction-swirl"
    ic_amplitude: float = 0.5
    output_stride: int = 1
    snapshot_stride: int = 0
    out_dir: str = "out/run"
    seed: int = 0

    def validate(self):
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")
        if not 1.0 < self.beta <= 1.2:
            raise ConfigError(f"beta must lie in (1.0, 1.2], got {self.beta}")
        if self.refinement_p < 2:
            raise ConfigError(f"refinement_p must be >= 2, got {self.refinement_p}")
        if self.dt != "auto" and not (isinstance(self.dt, float) and self.dt > 0):
            raise ConfigError(f"dt must be 'auto' or a positive float, got {self.dt}")
        if self.t_end < 0:
            raise ConfigError(f"t_end must be >= 0, got {self.t_end}")
        if not 0 < self.cfl <= 0.5:
            raise ConfigError(f"cfl must lie in (0, 0.5], got {self.cfl}")
        if self.picard_max < 1:
            raise ConfigError(f"picard_max must be >= 1, got {self.picard_max}")
        if not 0 < self.picard_tol < 1:
            raise ConfigError(f"picard_tol must lie in (0, 1), got {self.picard_tol}")
        if self.ic_kind not in IC_KINDS:
            raise ConfigError(f"ic.kind must be one of {IC_KINDS}, got {self.ic_kind!r}")
        if self.output_stride < 1:
            raise ConfigError(f"output_stride must be >= 1, got {self.output_stride}")
        if self.snapshot_stride < 0:
            raise ConfigError(f"snapshot_stride must be >= 0, got {self.snapshot_stride}")
        return self

    def echo(self) -> str:
        """Round-trippable text form (canonical key order)."""
        attr_to_key = {attr: key for key, (attr, _) in _KEYS.items()}
        lines = []
        for f in fields(self):
            lines.append(f"{attr_to_key[f.name]} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw!r}", line=lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}", line=lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r}", line=lineno)
        seen.add(key)
        attr, conv = _KEYS[key]
        try:
            setattr(cfg, attr, conv(value))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", line=lineno) from exc
    return cfg.validate()


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text)
