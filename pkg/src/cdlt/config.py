"""Flat ``key = value`` experiment configuration.

Unknown keys are rejected, values are parsed according to the field type
and the canonical text form (sorted keys, normalized values) is what gets
hashed, so two files that differ only in comments, ordering or spacing
share a hash.  ``out`` and ``workers`` are execution settings: they do not
change any output byte and are left out of the hash.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable

from .branching import OffspringLaw
from .gibbs import parse_potential

UNHASHED = ("out", "workers")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


@dataclass(frozen=True)
class ExperimentConfig:
    law: str = "geometric"
    height: int = 512
    seed: int = 2026
    trees: int = 1
    # spin system
    potential: str = "xy:1.0"
    group_dim: int = 1
    delta: float = 1.0
    # growth diagnostics
    epsilon: float = 0.1
    martingale_n: int = 200
    martingale_replicas: int = 1000
    # gauge
    gauge_r: int = 1
    gauge_n: tuple[int, ...] = (8, 32, 128, 512)
    theta: float = math.pi
    # symmetry experiment
    mw_r: int = 5
    mw_n: tuple[int, ...] = (16, 128)
    replicas: int = 20
    sweeps: int = 10000
    # long range
    lr_depths: tuple[int, ...] = (256, 512)
    probe_radius: int = 32
    lr_L: tuple[int, ...] = (1, 4, 16, 64, 256)
    # execution
    out: str = "run"
    workers: int = 1

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        """Raise ValueError when a field violates the preconditions it feeds."""
        OffspringLaw.parse(self.law)
        pot = parse_potential(self.potential)
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.height < 1 or self.trees < 1:
            raise ValueError("height and trees must be >= 1")
        if not 0 <= self.group_dim <= pot.dim:
            raise ValueError(f"group_dim must lie in 0..{pot.dim}")
        if self.delta <= 0 or self.epsilon <= 0:
            raise ValueError("delta and epsilon must be positive")
        if self.martingale_n < 2 or self.martingale_replicas < 100:
            raise ValueError("martingale_n >= 2 and martingale_replicas >= 100 required")
        if self.gauge_r < 1 or any(n - self.gauge_r < 3 for n in self.gauge_n) or not self.gauge_n:
            raise ValueError("gauge needs gauge_r >= 1 and n - gauge_r >= 3 for every n")
        if self.mw_r < 0 or not self.mw_n or any(n <= self.mw_r + 1 for n in self.mw_n):
            raise ValueError("every mw_n must exceed mw_r + 1")
        if self.replicas < 1 or self.sweeps < 2:
            raise ValueError("replicas >= 1 and sweeps >= 2 required")
        if not self.lr_depths or min(self.lr_depths) < self.probe_radius or self.probe_radius < 0:
            raise ValueError("long-range depths must be >= probe_radius >= 0")
        if not self.lr_L or self.workers < 1:
            raise ValueError("lr_L must be non-empty and workers >= 1")

    # -- text form ---------------------------------------------------------

    @staticmethod
    def _format(value) -> str:
        if isinstance(value, tuple):
            return ",".join(str(v) for v in value)
        if isinstance(value, float):
            return repr(value)
        return str(value)

    @classmethod
    def _parse(cls, name: str, text: str):
        kind = {f.name: f.type for f in fields(cls)}[name]
        try:
            if kind == "int":
                return int(text)
            if kind == "float":
                return float(text)
            if kind.startswith("tuple"):
                return _ints(text)
            return text
        except ValueError:
            raise ValueError(f"cannot parse {name} = {text!r} as {kind}") from None

    def to_text(self, hashed_only: bool = False) -> str:
        items = sorted(dataclasses.asdict(self).items())
        return "".join(f"{k} = {self._format(v if not isinstance(v, list) else tuple(v))}\n"
                       for k, v in items if not (hashed_only and k in UNHASHED))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_text(hashed_only=True).encode()).hexdigest()[:16]

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(lines, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if not sep:
                raise ValueError(f"line {lineno}: expected key = value")
            if key not in known:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            if key in values:
                raise ValueError(f"line {lineno}: duplicate key {key!r}")
            values[key] = cls._parse(key, val)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_lines(fh)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    def replace(self, **changes) -> "ExperimentConfig":
        for key, val in list(changes.items()):
            if isinstance(val, str) and key in {f.name for f in fields(self)}:
                changes[key] = self._parse(key, val)
        return dataclasses.replace(self, **changes)
