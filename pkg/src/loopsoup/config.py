"""Run configuration: a version-stamped YAML file with schema validation."""

from __future__ import annotations

import ast
import copy
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Mapping

import numpy as np
import yaml

__all__ = ["CONFIG_VERSION", "ConfigError", "RunConfig", "parse_mass", "load_config", "dump_config"]

CONFIG_VERSION = 1

_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Load, ast.Call,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Mod,
)
_FUNCS = {
    "sqrt": np.sqrt, "exp": np.exp, "log": np.log, "sin": np.sin, "cos": np.cos,
    "abs": np.abs, "hypot": np.hypot, "minimum": np.minimum, "maximum": np.maximum,
}
_CONSTS = {"pi": np.pi, "e": np.e}


class ConfigError(ValueError):
    pass


def parse_mass(spec):
    """Mass from a config value: ``None``, a number, or an expression in ``x`` and ``y``.

    Expressions may use ``+ - * / ** %``, ``pi``, ``e`` and the functions
    ``sqrt exp log sin cos abs hypot minimum maximum``.
    """
    if spec is None or isinstance(spec, (int, float)):
        if spec is not None and spec < 0:
            raise ConfigError("mass must be nonnegative")
        return None if spec is None else float(spec)
    if not isinstance(spec, str):
        raise ConfigError(f"bad mass spec {spec!r}")
    try:
        tree = ast.parse(spec, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad mass expression {spec!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ConfigError(f"disallowed syntax in mass expression: {type(node).__name__}")
        if isinstance(node, ast.Name) and node.id not in ("x", "y", *_FUNCS, *_CONSTS):
            raise ConfigError(f"unknown name {node.id!r} in mass expression")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ConfigError("only whitelisted functions may be called")
    code = compile(tree, "<mass>", "eval")

    def m(x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return np.broadcast_to(eval(code, {"__builtins__": {}}, {**_FUNCS, **_CONSTS, "x": x, "y": y}),
                               np.broadcast(x, y).shape)

    m.expression = spec
    return m


@dataclass
class RunConfig:
    """One experiment run.

    ``cutoffs`` may hold ``maxlen``, ``t0``, ``t_max``, ``N`` (a list) and
    ``threshold``; ``params`` holds experiment-specific extras.
    """

    experiment: str
    domain: dict | None = None
    lam: float | None = None
    mass: Any = None
    cutoffs: dict = field(default_factory=dict)
    replicas: int | None = None
    seed: int = 0
    workers: int = 1
    out: str | None = None
    params: dict = field(default_factory=dict)
    version: int = CONFIG_VERSION

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.experiment, str) or not self.experiment:
            raise ConfigError("experiment name required")
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"config version {self.version} unsupported (expected {CONFIG_VERSION})")
        if self.replicas is not None and (int(self.replicas) != self.replicas or self.replicas < 1):
            raise ConfigError("replicas must be a positive integer")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        if int(self.workers) != self.workers or self.workers < 1:
            raise ConfigError("workers must be a positive integer")
        if self.lam is not None and not self.lam > 0:
            raise ConfigError("lambda must be positive")
        if self.domain is not None:
            if not isinstance(self.domain, Mapping) or len(self.domain) != 1:
                raise ConfigError("domain must be a mapping with one of rectangle, disc, sites")
            (kind,) = self.domain
            if kind not in ("rectangle", "disc", "sites"):
                raise ConfigError(f"unknown domain kind {kind!r}")
        parse_mass(self.mass)
        c = self.cutoffs
        if "maxlen" in c and (int(c["maxlen"]) != c["maxlen"] or c["maxlen"] < 2 or c["maxlen"] % 2):
            raise ConfigError("maxlen must be an even integer >= 2")
        if "t0" in c and not c["t0"] > 0:
            raise ConfigError("t0 must be positive")
        if "N" in c:
            Ns = c["N"] if isinstance(c["N"], list) else [c["N"]]
            if any(int(n) != n or n < 4 for n in Ns) or Ns != sorted(Ns):
                raise ConfigError("N must be ascending integers >= 4")

    @property
    def mass_fn(self):
        return parse_mass(self.mass)

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "lambda" in d:
            raise ConfigError("use 'lam' for the intensity")
        return cls(**copy.deepcopy(dict(d)))

    def with_overrides(self, **kw) -> "RunConfig":
        d = self.to_dict()
        d.update({k: v for k, v in kw.items() if v is not None})
        return RunConfig.from_dict(d)


def dump_config(cfg: RunConfig, path: str | None = None) -> str:
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def load_config(source: str) -> RunConfig:
    """Load from a YAML file path or YAML text."""
    text = source
    if "\n" not in source and not source.strip().startswith("{"):
        with open(source) as fh:
            text = fh.read()
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    return RunConfig.from_dict(data)
