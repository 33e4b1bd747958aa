"""Plain-text ``key = value`` run configuration."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..errors import ConfigError
from ..lattice import TorusGrid
from ..potential import Model, ModelParams, WickConvention
from ..scales import ScaleParams

SCHEMA_VERSION = 1

_ALIASES = {
    "lambda": "lam",
    "mass": "m",
    "grid": "n",
    "mc.samples.flow": "mc_flow",
    "mc.samples.diag": "mc_diag",
    "grid.per_octave": "per_octave",
    "grid.t_min": "t_min",
    "grid.horizon": "horizon",
    "eps.sweep": "sweep",
    "output": "output_dir",
    "experiment": "name",
}


@dataclass(frozen=True)
class RunConfig:
    name: str = ""
    model: str = "liouville"
    beta: float = math.pi
    lam: float = 1.0
    m: float = 1.0
    n: int = 16
    wick: str = "epsilon-power"
    per_octave: int = 2
    t_min: float = 2.0**-20
    horizon: float = 128.0
    mc_flow: int = 256
    mc_diag: int = 4096
    sweep: tuple = ()
    replicas: int = 100
    seed: int = 0
    output_dir: str = "results"
    extra: dict = field(default_factory=dict)
    schema: int = SCHEMA_VERSION

    def model_params(self, n: int | None = None, model: str | None = None, **kw) -> ModelParams:
        return ModelParams(
            Model(model or self.model),
            kw.get("beta", self.beta),
            ScaleParams(self.m, TorusGrid(n or self.n)),
            kw.get("lam", self.lam),
            WickConvention(self.wick),
        )

    def get(self, key: str, default=None, cast=float):
        if key not in self.extra:
            return default
        return _cast_value(self.extra[key], cast)

    def to_text(self) -> str:
        lines = [f"schema = {self.schema}"]
        for f in fields(self):
            if f.name in ("schema", "extra"):
                continue
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        for key in sorted(self.extra):
            lines.append(f"{key} = {self.extra[key]}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def updated(self, **changes) -> "RunConfig":
        extra = dict(self.extra)
        known = {f.name for f in fields(self)}
        direct = {}
        for key, value in changes.items():
            key = _ALIASES.get(key, key)
            if key in known:
                direct[key] = _coerce(key, value)
            else:
                extra[key] = value
        return replace(self, extra=extra, **direct)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _cast_value(value, cast):
    if cast is tuple:
        return tuple(float(v) for v in str(value).split(",") if v.strip())
    if cast is bool:
        return str(value).strip().lower() in ("1", "true", "yes", "on")
    return cast(value)


def _coerce(key, value):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "tuple":
            if isinstance(value, (tuple, list)):
                return tuple(int(v) for v in value)
            return tuple(int(v) for v in str(value).split(",") if v.strip())
        return str(value) if kind == "str" else value
    except ValueError as exc:
        raise ConfigError(f"bad value {value!r} for {key}") from exc


def config_assignments(text: str) -> dict:
    """Raw ``key -> value`` pairs of a config text, aliases resolved."""
    out = {}
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {number}: empty key")
        out[_ALIASES.get(key, key)] = value
    schema = out.pop("schema", str(SCHEMA_VERSION))
    try:
        schema = int(schema)
    except ValueError as exc:
        raise ConfigError(f"bad schema version {schema!r}") from exc
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {schema}")
    return out


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    return (base or RunConfig()).updated(**config_assignments(text))


def read_config_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    return parse_config(read_config_text(path), base)
