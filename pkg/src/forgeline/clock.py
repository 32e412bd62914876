"""Injectable clocks.

Every timestamp the engine persists flows through a Clock so tests and
golden runs can pin time (`--clock fixed:<epoch>` on the CLI).
"""

from __future__ import annotations

import time
from typing import Callable

Clock = Callable[[], float]


def system_clock() -> float:
    return time.time()


class FixedClock:
    """Clock frozen at a single epoch second."""

    def __init__(self, epoch: float):
        self.epoch = float(epoch)

    def __call__(self) -> float:
        return self.epoch

    def __repr__(self) -> str:  # pragma: no cover
        return f"FixedClock({self.epoch})"


def parse_clock(spec: str | None) -> Clock:
    """Parse a CLI clock spec: ``fixed:<epoch>`` or ``system`` (default)."""
    if not spec or spec == "system":
        return system_clock
    if spec.startswith("fixed:"):
        return FixedClock(float(spec.split(":", 1)[1]))
    raise ValueError(f"unrecognized clock spec: {spec!r}")
