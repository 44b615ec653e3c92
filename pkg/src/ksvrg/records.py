"""Plain record types shared by the optimizers and the experiment harness."""
from __future__ import annotations

from dataclasses import astuple, dataclass, fields


@dataclass(frozen=True)
class TraceRow:
    method: str
    k: int
    q: int
    seed: int
    eta: float
    outer_loop: int
    gc_total: int
    er_total: int
    wall_ms: float
    fval: float
    residual: float
    grad_norm: float
    live_snapshots: int

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def values(self) -> tuple:
        return astuple(self)


@dataclass(frozen=True)
class StallSpan:
    """Reads ``[start_er, end_er)`` performed without moving the iterate."""

    start_er: int
    end_er: int
    cause: str

    @property
    def length(self) -> int:
        return self.end_er - self.start_er
