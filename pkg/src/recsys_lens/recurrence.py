"""Recurrence plots of MAE traces."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .recommenders import SeriesTrace

DEFAULT_FRACTION = 0.1


@dataclass(frozen=True, eq=False)
class RecurrenceGrid:
    bits: np.ndarray  # (n, n) uint8
    epsilon: float
    source_label: str = ""

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    def to_pbm(self) -> str:
        """Plain bitmap (magic P1), 1 = black."""
        rows = [" ".join(str(int(b)) for b in row) for row in self.bits]
        return "\n".join([f"P1\n{self.n} {self.n}", *rows]) + "\n"


def _values(series) -> tuple[np.ndarray, str]:
    if isinstance(series, SeriesTrace):
        return series.values(), series.label
    return np.asarray(series, dtype=np.float64), ""


def recurrence_plot(series: SeriesTrace | Sequence[float], epsilon: float) -> RecurrenceGrid:
    """bits[x, y] = 1 iff |T(x) - T(y)| < epsilon (equality gives 0)."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    y, label = _values(series)
    if len(y) == 0:
        raise ValueError("empty series")
    bits = (np.abs(y[:, None] - y[None, :]) < epsilon).astype(np.uint8)
    return RecurrenceGrid(bits, float(epsilon), label)


def epsilon_from_fraction(series: SeriesTrace | Sequence[float], fraction: float = DEFAULT_FRACTION) -> float:
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    y, _ = _values(series)
    if len(y) == 0:
        raise ValueError("empty series")
    rng = float(y.max() - y.min())
    if rng == 0.0:
        raise ValueError("series is constant; pass epsilon explicitly")
    return fraction * rng


def recurrence_rate(grid: RecurrenceGrid) -> float:
    return float(grid.bits.sum()) / grid.n**2
