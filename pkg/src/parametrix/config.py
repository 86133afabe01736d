"""Dataclass configurations for the experiment scripts."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple


@dataclass
class SynthesisConfig:
    route: str = "youla"  # youla | iop | slp
    horizon: Optional[int] = None  # None -> 4 n
    tail: str = "closed"  # SLP only: closed | open
    factorization: str = "auto"  # youla only: auto | stable | deadbeat | riccati | statefb

    def __post_init__(self):
        if self.route not in ("youla", "iop", "slp"):
            raise ValueError(f"unknown route {self.route!r}")
        if self.tail not in ("closed", "open"):
            raise ValueError(f"unknown tail mode {self.tail!r}")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class Example1Config:
    sizes: Tuple[int, ...] = (1, 3, 5)
    horizon: int = 8
    rho: float = 0.5
    k_tol: float = 1e-6
    cost_tol: float = 1e-8


@dataclass
class SweepConfig:
    """Seeded sweep over random plants for the equivalence experiments."""

    seed: int = 2024
    n_plants: int = 10
    max_n: int = 3
    max_io: int = 2
    rho: float = 0.5
    routes: Tuple[str, ...] = ("youla", "iop", "slp")
    synthesis: SynthesisConfig = field(default_factory=lambda: SynthesisConfig(tail="open"))
