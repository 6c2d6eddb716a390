from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np


@dataclass
class AttackResult:
    method: str
    perturbation: np.ndarray
    objective: float
    prediction: int
    target: int
    eps: float
    wall_time: float = 0.0
    iterations: int = 0
    timeline: list = field(default_factory=list)  # (elapsed seconds, incumbent objective)
    normalized_objective: float = float("nan")
    index: int = -1
    status: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def flipped(self) -> bool:
        return self.objective > 0


class Timeline:
    """Incumbent objective over time: every improvement plus a 1 s heartbeat."""

    def __init__(self, start: float | None = None, heartbeat: float = 1.0):
        self.start = time.monotonic() if start is None else start
        self.heartbeat = heartbeat
        self.points: list = []
        self._last = -np.inf

    def elapsed(self) -> float:
        return time.monotonic() - self.start

    def record(self, value: float):
        now = self.elapsed()
        if self.points and value < self.points[-1][1]:
            raise ValueError("incumbent objective decreased")
        self.points.append((now, float(value)))
        self._last = now

    def tick(self, value: float):
        if self.elapsed() - self._last >= self.heartbeat:
            self.record(value)
