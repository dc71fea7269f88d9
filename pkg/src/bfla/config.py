"""Runtime configuration and the flat ``key = value`` config file format."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

from .blocks import BlockGeometry
from .errors import ConfigError
from .stage2 import RescueConfig


@dataclass(frozen=True)
class BflaConfig:
    b: int = 256
    g: int = 64
    gamma: float = 0.95
    tile: int = 64
    n_local: int = 8
    eta: int = 16  # 0 disables stride rescue
    rho: float = 0.0
    seed: int = 0
    hq: int = 4
    hkv: int = 2
    nq: int = 4096
    nkv: int = 4096
    dim: int = 64
    precision: str = "f32"
    dist: str = "clustered"
    oracle: str = "auto"
    bound_check: bool = False

    @property
    def geometry(self) -> BlockGeometry:
        return BlockGeometry(self.b, self.g, self.tile)

    @property
    def rescue(self) -> RescueConfig:
        return RescueConfig(self.n_local, self.eta, self.rho, self.seed)

    def validate(self) -> "BflaConfig":
        self.geometry
        self.rescue
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if min(self.hq, self.hkv, self.nq, self.nkv, self.dim) < 1:
            raise ConfigError("hq, hkv, nq, nkv, dim must all be >= 1")
        if self.hq % self.hkv:
            raise ConfigError(f"hq={self.hq} must be a multiple of hkv={self.hkv}")
        if self.nq > self.nkv:
            raise ConfigError(f"nq={self.nq} must not exceed nkv={self.nkv}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.dist not in ("gaussian", "clustered"):
            raise ConfigError(f"dist must be gaussian or clustered, got {self.dist!r}")
        if self.oracle not in ("on", "off", "auto"):
            raise ConfigError(f"oracle must be on, off or auto, got {self.oracle!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        return self

    def with_values(self, **raw) -> "BflaConfig":
        """Replace fields from strings (or already-typed values)."""
        types = {f.name: f.type for f in fields(self)}
        parsed = {}
        for key, value in raw.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            parsed[key] = _coerce(key, types[key], value)
        return replace(self, **parsed)

    def as_dict(self) -> dict:
        return asdict(self)


def _coerce(key: str, typ: str, value):
    if not isinstance(value, str):
        return value
    value = value.strip()
    try:
        if typ == "int":
            return int(value, 0)
        if typ == "float":
            return float(value)
        if typ == "bool":
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
    except ValueError:
        raise ConfigError(f"cannot parse {key}={value!r} as {typ}")
    return value


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def load_config(path: str, base: BflaConfig | None = None) -> BflaConfig:
    with open(path) as fh:
        raw = parse_config_text(fh.read())
    return (base or BflaConfig()).with_values(**raw)
