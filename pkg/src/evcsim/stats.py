"""Per-phase descriptive statistics for run logs.

Reports range, interquartile range and median for each signal over the
run's phases (normal operation, attack, mitigation), the summary format
used throughout the project's result tables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


class EmptyPhase(ValueError):
    """A phase selects no samples, so its statistics are undefined."""


@dataclass(frozen=True)
class PhaseStats:
    """Five-number summary of one signal over one phase."""

    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float

    def __post_init__(self):
        if not (self.minimum <= self.q1 <= self.median <= self.q3 <= self.maximum):
            raise ValueError(f"order statistics out of order: {self}")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.minimum, self.q1, self.median, self.q3, self.maximum)


@dataclass(frozen=True)
class RunStats:
    """Phase name -> five-number summary, for a single signal."""

    phases: dict[str, PhaseStats]

    def get(self, phase: str) -> PhaseStats:
        return self.phases[phase]


def _order_statistic(xs: np.ndarray, p: float) -> float:
    """Linear interpolation between order statistics at position (n-1)*p."""
    pos = (len(xs) - 1) * p
    lo = int(np.floor(pos))
    frac = pos - lo
    if frac == 0.0:
        return float(xs[lo])
    return float(xs[lo] + frac * (xs[lo + 1] - xs[lo]))


def quartiles(series: Sequence[float]) -> tuple[float, float, float]:
    """(q1, median, q3) under the interpolated-order-statistic convention."""
    xs = np.sort(np.asarray(series, dtype=float))
    if xs.size == 0:
        raise EmptyPhase("cannot take quartiles of an empty sequence")
    return (
        _order_statistic(xs, 0.25),
        _order_statistic(xs, 0.50),
        _order_statistic(xs, 0.75),
    )


def compute_stats(
    series: Sequence[float], phases: Mapping[str, Sequence[bool]]
) -> RunStats:
    """Summarize one signal over labeled sample subsets.

    ``phases`` maps a phase name to a boolean mask over the series. Raises
    :class:`EmptyPhase` naming the first phase that selects nothing.
    """
    x = np.asarray(series, dtype=float)
    out = {}
    for name, mask in phases.items():
        m = np.asarray(mask, dtype=bool)
        if m.shape != x.shape:
            raise ValueError(
                f"phase {name!r} mask length {m.size} != series length {x.size}"
            )
        sel = x[m]
        if sel.size == 0:
            raise EmptyPhase(f"phase {name!r} selects no samples")
        q1, med, q3 = quartiles(sel)
        out[name] = PhaseStats(float(sel.min()), q1, med, q3, float(sel.max()))
    return RunStats(phases=out)


def window_mask(t: Sequence[float], windows: Mapping[str, tuple[float, float]]) -> np.ndarray:
    """Samples falling inside any attack window (half-open intervals)."""
    tt = np.asarray(t, dtype=float)
    m = np.zeros(tt.shape, dtype=bool)
    for lo, hi in windows.values():
        m |= (tt >= lo) & (tt < hi)
    return m


def normal_mask(t: Sequence[float], windows: Mapping[str, tuple[float, float]]) -> np.ndarray:
    """Samples before the first window opens; the whole run if none exist."""
    tt = np.asarray(t, dtype=float)
    if not windows:
        return np.ones(tt.shape, dtype=bool)
    first = min(lo for lo, _ in windows.values())
    return tt < first
