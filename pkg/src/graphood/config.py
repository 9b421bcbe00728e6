"""Run configuration and the method composition table."""

from __future__ import annotations

import dataclasses
import json
from typing import Optional

from .errors import ConfigError


@dataclasses.dataclass(frozen=True)
class Method:
    name: str
    loss: str          # "nll" or "logitnorm"
    reg: bool          # hinge energy regulariser (needs exposed OOD nodes)
    ub: bool           # bounded + uniform variance regulariser
    score: str         # "msp", "raw" or "propagated"


METHODS = {
    m.name: m
    for m in (
        Method("msp", "nll", False, False, "msp"),
        Method("energy", "nll", False, False, "raw"),
        Method("energy-ft", "nll", True, False, "raw"),
        Method("gnnsafe", "nll", False, False, "propagated"),
        Method("gnnsafe-pp", "nll", True, False, "propagated"),
        Method("nodesafe", "nll", False, True, "propagated"),
        Method("nodesafe-pp", "nll", True, True, "propagated"),
        Method("logitnorm", "logitnorm", False, False, "propagated"),
    )
}


@dataclasses.dataclass(frozen=True)
class RunConfig:
    method: str = "nodesafe"
    eta: float = 0.5
    hops: int = 2
    lambda1: float = 0.001
    lambda2: float = 1.0
    alpha: float = 0.01
    m_in: float = -5.0
    m_out: float = -1.0
    tau: float = 0.04
    lr: float = 0.01
    epochs: int = 200
    hidden: int = 64
    seed: int = 0
    ub_start_epoch: int = 50
    ub_over_all_nodes: bool = False
    reg_on_propagated: bool = True
    exposure: bool = False
    dropout: float = 0.0
    weight_decay: float = 5e-4
    bins: int = 50
    tpr: float = 0.95
    dataset: Optional[str] = None
    output: Optional[str] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        checks = [
            (0.0 <= self.eta <= 1.0, "eta must lie in [0, 1]"),
            (self.hops >= 0, "hops must be >= 0"),
            (0.0 <= self.lambda1 <= 1.0, "lambda1 must lie in [0, 1]"),
            (self.lambda2 >= 0.0, "lambda2 must be >= 0"),
            (self.alpha >= 0.0, "alpha must be >= 0"),
            (self.tau > 0.0, "tau must be > 0"),
            (self.lr > 0.0, "lr must be > 0"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.hidden >= 1, "hidden must be >= 1"),
            (self.ub_start_epoch >= 0, "ub_start_epoch must be >= 0"),
            (0.0 <= self.dropout < 1.0, "dropout must lie in [0, 1)"),
            (self.weight_decay >= 0.0, "weight_decay must be >= 0"),
            (self.bins >= 1, "bins must be >= 1"),
            (0.0 < self.tpr <= 1.0, "tpr must lie in (0, 1]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def spec(self) -> Method:
        return METHODS[self.method]

    @property
    def uses_exposure(self) -> bool:
        return self.exposure or self.spec.reg

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self, *, paths: bool = True) -> dict:
        d = dataclasses.asdict(self)
        if not paths:
            d.pop("dataset")
            d.pop("output")
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - set(fields))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        kwargs = {k: coerce(k, fields[k].type, v) for k, v in data.items()}
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
        return cls.from_dict(data)


def field_type(name: str) -> str:
    return {f.name: f.type for f in dataclasses.fields(RunConfig)}[name]


def coerce(key: str, typ: str, value):
    """Convert ``value`` to the declared type of ``key`` or raise ConfigError."""
    try:
        if typ == "bool":
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
                return value.lower() in ("true", "1")
            raise ValueError
        if typ == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if typ == "float":
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if typ == "str":
            return str(value)
        return None if value is None else str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: cannot interpret {value!r} as {typ}") from None
