"""Run configuration: dataclass blocks filled from ``section.key = value`` lines."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class GridConfig:
    n: int = 2
    box: list[float] = field(default_factory=lambda: [0.0, 1.0, 0.0, 1.0])
    h: float = 0.125
    collar: float = 0.125
    r_ext: float | None = None

    def axes(self):
        if len(self.box) != 2 * self.n:
            raise ConfigError("grid.box needs 2n numbers: lo,hi per axis")
        return [(self.box[2 * d], self.box[2 * d + 1]) for d in range(self.n)]


@dataclass
class OperatorConfig:
    alpha: float = 1.5


@dataclass
class ModelConfig:
    name: str = "example"
    gamma: float = 1.0
    p: float = 3.5
    coef: float = 0.0
    forcing: float = 0.0
    table: str = ""
    u_min: float | None = None
    u_max: float | None = None
    u0: float | None = None
    zeta: float = 0.005
    z_max: float = 10.0
    nz: int = 401
    nu: int = 5
    cost_target: float = 0.5


@dataclass
class MPTConfig:
    eta: float = 0.05
    P: int = 32
    tol_grad: float = 1e-8
    tol_val: float = 1e-8
    max_iter: int = 2000
    samples: int = 200
    seed: int = 0
    mode: str = "minimax"


@dataclass
class StabilityConfig:
    K: int = 16
    du: float = 0.01
    dv: float = 0.02
    rate: float = 1.0
    warm: bool = True
    project: bool = True
    l1: float = 1.0
    gap_radius: float = 2.0
    gap_samples: int = 50


@dataclass
class ControlConfig:
    kind: str = "piecewise"
    splits: list[int] = field(default_factory=lambda: [2])
    values: list[float] = field(default_factory=list)
    n_values: int = 3
    lam: float = 1.0
    anchors: int = 2
    mode: str = "auto"


@dataclass
class SpectrumConfig:
    count: int = 10


@dataclass
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    operator: OperatorConfig = field(default_factory=OperatorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    mpt: MPTConfig = field(default_factory=MPTConfig)
    stability: StabilityConfig = field(default_factory=StabilityConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    spectrum: SpectrumConfig = field(default_factory=SpectrumConfig)
    output: str = "out"
    workers: int = 1

    def validate(self) -> RunConfig:
        g, a = self.grid, self.operator.alpha
        if not 0 < a < 2:
            raise ConfigError("operator.alpha must lie in (0, 2)")
        if g.n not in (1, 2, 3):
            raise ConfigError("grid.n must be 1, 2 or 3")
        if not g.n > a:
            raise ConfigError("need grid.n > operator.alpha")
        if not g.h > 0:
            raise ConfigError("grid.h must be positive")
        g.axes()
        if self.model.name not in ("example", "power_p", "custom-table", "quadratic"):
            raise ConfigError(f"unknown model {self.model.name!r}")
        if self.model.name == "power_p" and not self.model.p > 2:
            raise ConfigError("model.p must exceed 2")
        if self.model.name == "custom-table" and not self.model.table:
            raise ConfigError("model.table is required for custom-table")
        if self.mpt.mode not in ("minimax", "refine"):
            raise ConfigError("mpt.mode must be minimax or refine")
        if self.control.kind not in ("piecewise", "lipschitz"):
            raise ConfigError("control.kind must be piecewise or lipschitz")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self


def _coerce(text: str, tp, key: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or (origin is not None and type(None) in args):
        inner = [a for a in args if a is not type(None)][0]
        if text.lower() in ("none", ""):
            return None
        return _coerce(text, inner, key)
    try:
        if origin is list:
            return [_coerce(t.strip(), args[0], key) for t in text.split(",") if t.strip()]
        if tp is bool:
            if text.lower() not in ("true", "false"):
                raise ValueError
            return text.lower() == "true"
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def _hints(obj):
    return typing.get_type_hints(type(obj))


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    top = _hints(cfg)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." in key:
            section, name = key.split(".", 1)
            block = getattr(cfg, section, None)
            if section not in top or not dataclasses.is_dataclass(block):
                raise ConfigError(f"line {lineno}: unknown section {section!r}")
            hints = _hints(block)
            if name not in hints:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            setattr(block, name, _coerce(value, hints[name], key))
        else:
            if key not in top or dataclasses.is_dataclass(getattr(cfg, key)):
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            setattr(cfg, key, _coerce(value, top[key], key))
    return cfg.validate()


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text)


def config_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
