"""Run configuration: one merged view of every component's settings.

Files are line oriented, ``section.key = value`` with ``#`` comments::

    # toy.cfg
    model.F = 64
    train.steps = 5000
    eval.rho_grid = 0.1:0.9:0.1
"""

from __future__ import annotations

import os
import types
import typing
from dataclasses import dataclass, field, fields
from os import PathLike

from east.errors import ConfigError
from east.model import ModelConfig
from east.sampler import DEFAULT_RHO_GRID, SamplingConfig
from east.train import TrainConfig
from east.video import SyntheticConfig

SEED_ENV = "EAST_SEED"


@dataclass
class EvalConfig:
    rho_grid: tuple[float, ...] = DEFAULT_RHO_GRID
    mask_kind: str = ""  # empty: reuse the training mask kind
    batch_size: int = 300

    def validate(self) -> None:
        if not self.rho_grid or any(not 0 < r <= 1 for r in self.rho_grid):
            raise ConfigError("eval.rho_grid must be nonempty with values in (0, 1]")
        if self.mask_kind not in ("", "difference", "random", "none"):
            raise ConfigError(f"unknown eval.mask_kind {self.mask_kind!r}")
        if self.batch_size < 1:
            raise ConfigError("eval.batch_size must be >= 1")


@dataclass
class RunConfig:
    data: SyntheticConfig = field(default_factory=SyntheticConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def sections(self) -> dict[str, object]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def validate(self) -> None:
        self.data.validate()
        self.sampling.validate()
        self.model.validate()
        self.train.validate()
        self.eval.validate()
        if self.sampling.T != self.model.T:
            raise ConfigError("sampling.T and model.T differ")
        if self.data.n1 * self.data.n2 != self.model.num_classes:
            raise ConfigError(f"model.num_classes={self.model.num_classes} but the data has "
                              f"n1*n2={self.data.n1 * self.data.n2} classes")

    @property
    def eval_mask_kind(self) -> str:
        return self.eval.mask_kind or self.train.mask_kind

    def set(self, key: str, raw: str) -> None:
        section, _, name = key.partition(".")
        sections = self.sections()
        if section not in sections or not name:
            raise ConfigError(f"unknown config key {key!r}")
        target = sections[section]
        types_ = {f.name: f.type for f in fields(target)}
        if name not in types_:
            raise ConfigError(f"unknown config key {key!r}")
        hints = typing.get_type_hints(type(target))
        try:
            value = parse_value(raw, hints[name])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
        setattr(target, name, value)

    def to_text(self) -> str:
        lines = []
        for section, obj in self.sections().items():
            for f in fields(obj):
                lines.append(f"{section}.{f.name} = {format_value(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"

    def write(self, path: str | PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())


def parse_rho_grid(text: str) -> tuple[float, ...]:
    """``start:stop:step`` (inclusive within 1e-9) or a comma separated list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError("rho grid must look like start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise ValueError("rho grid needs step > 0 and stop >= start")
        n = int((stop - start) / step + 1e-9) + 1
        return tuple(round(start + i * step, 10) for i in range(n))
    return tuple(float(p) for p in text.split(",") if p.strip())


def parse_value(raw: str, tp):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if raw.lower() in ("", "none"):
            return None
        return parse_value(raw, args[0])
    if origin is tuple:
        return parse_rho_grid(raw)
    if tp is bool:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError("expected a boolean")
    if tp is int:
        return int(raw)
    if tp is float:
        return float(raw)
    return raw


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, tuple):
        return ",".join(f"{v:g}" for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_lines(text: str, source: str = "<config>") -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        pairs.append((key.strip(), value.strip()))
    return pairs


def load_config(path: str | PathLike | None = None, overrides: list[str] = (),
                env: dict | None = None) -> RunConfig:
    """Defaults, then the file, then ``key=value`` overrides, then ``EAST_SEED``."""
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise FileNotFoundError(f"cannot read config {path}: {exc.strerror}") from None
        for key, value in parse_lines(text, str(path)):
            cfg.set(key, value)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        cfg.set(key.strip(), value)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            cfg.train.seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    cfg.sampling.T = cfg.model.T
    cfg.validate()
    return cfg


def config_from_text(text: str) -> RunConfig:
    cfg = RunConfig()
    for key, value in parse_lines(text):
        cfg.set(key, value)
    return cfg

