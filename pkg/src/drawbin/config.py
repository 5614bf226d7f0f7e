"""Run configuration shared by the command-line subcommands.

Config files are flat JSON objects whose keys are the long flag names of a
subcommand (``max-iters`` or ``max_iters``). Explicit flags override file values.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .classical import MLT_DEFAULTS, NIBLACK_DEFAULTS, SAUVOLA_DEFAULTS, ThresholdParams
from .labeling import CwmfParams
from .nn.train import TrainConfig

THREADS_ENV = "DRAWBIN_THREADS"

CLASSICAL_DEFAULTS = {
    "niblack": NIBLACK_DEFAULTS,
    "sauvola": SAUVOLA_DEFAULTS,
    "mlt": MLT_DEFAULTS,
}


class ConfigError(ValueError):
    """Bad flag value, malformed config file or unknown key."""


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a flat JSON object")
    out = {}
    for key, value in data.items():
        if isinstance(value, (dict, list)):
            raise ConfigError(f"{path}: key {key!r} must hold a scalar")
        out[key.replace("-", "_")] = value
    return out


def merge(flags: dict, file_values: dict, defaults: dict) -> dict:
    """Flags that were given win, then file values, then defaults. Unknown file keys are rejected."""
    unknown = sorted(set(file_values) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    out = dict(defaults)
    for k, v in file_values.items():
        out[k] = v
    for k, v in flags.items():
        if v is not None:
            out[k] = v
    return out


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


@dataclass(frozen=True)
class RunConfig:
    command: str
    inputs: dict[str, Path] = field(default_factory=dict)
    outputs: dict[str, Path] = field(default_factory=dict)
    method: str | None = None
    threshold: ThresholdParams | None = None
    cwmf: CwmfParams = CwmfParams()
    training: TrainConfig | None = None
    seed: int = 0
    threads: int = 1
    options: dict = field(default_factory=dict)

    def validate_paths(self) -> None:
        """Inputs must exist; no output may overwrite an input."""
        for name, p in self.inputs.items():
            if not p.exists():
                raise FileNotFoundError(f"--{name}: {p} does not exist")
        resolved = {p.resolve() for p in self.inputs.values()}
        for name, p in self.outputs.items():
            if p.resolve() in resolved:
                raise ConfigError(f"--{name}: {p} is also an input")


def threshold_params(method: str, k=None, w=None, r=None) -> ThresholdParams:
    base = CLASSICAL_DEFAULTS.get(method, ThresholdParams(k=0.0))
    try:
        return ThresholdParams(
            k=base.k if k is None else float(k),
            w=base.w if w is None else int(w),
            r=base.r if r is None else float(r),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
