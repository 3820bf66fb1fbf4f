"""Threshold-based attack detection.

Each converter channel gets a detector that watches two scalars: the PV
array power (shared by all three detectors) and the channel's own duty
command as corrupted, i.e. the value that would reach the plant if nothing
intervened. A verdict of ``ATTACK`` hands the channel to the mitigation
layer; a short hysteresis hold keeps the verdict from flapping at window
edges.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .plant import CHANNELS, DutySet


class Verdict(enum.IntEnum):
    NORMAL = 0
    ATTACK = 1


class PredicateMode(enum.Enum):
    #: attack only when *both* power and duty leave their windows
    CONJUNCTIVE = "conjunctive"
    #: attack when *either* leaves its window
    DISJUNCTIVE = "disjunctive"


def _default_duty_windows() -> dict[str, tuple[float, float]]:
    return {"pv": (0.200, 0.201), "bes": (0.7, 0.71), "ev": (0.54, 0.55)}


@dataclass(frozen=True)
class DetectorConfig:
    """Normal-operation windows and verdict policy.

    Windows are open intervals: a value sitting exactly on an edge counts as
    outside. ``hold_steps`` is the number of control steps an attack verdict
    outlives its raw predicates.
    """

    power_window: tuple[float, float] = (1020.0, 1045.0)
    duty_windows: dict[str, tuple[float, float]] = field(
        default_factory=_default_duty_windows
    )
    mode: PredicateMode = PredicateMode.CONJUNCTIVE
    hold_steps: int = 5

    def __post_init__(self):
        if self.hold_steps < 1:
            raise ValueError("hold_steps must be >= 1")
        for lo, hi in [self.power_window, *self.duty_windows.values()]:
            if not lo < hi:
                raise ValueError("window bounds must satisfy lower < upper")
        if set(self.duty_windows) != set(CHANNELS):
            raise ValueError(f"duty_windows must cover exactly {CHANNELS}")


def _inside(x: float, window: tuple[float, float]) -> bool:
    lo, hi = window
    return lo < x < hi


def raw_verdict(channel: str, p_pv: float, duty: float, cfg: DetectorConfig) -> Verdict:
    """Instantaneous predicate evaluation, no hysteresis."""
    power_out = not _inside(p_pv, cfg.power_window)
    duty_out = not _inside(duty, cfg.duty_windows[channel])
    if cfg.mode is PredicateMode.CONJUNCTIVE:
        attacked = power_out and duty_out
    else:
        attacked = power_out or duty_out
    return Verdict.ATTACK if attacked else Verdict.NORMAL


def classify(
    channel: str,
    p_pv: float,
    duty: float,
    cfg: DetectorConfig,
    hold: int = 0,
) -> tuple[Verdict, int]:
    """One detector step.

    ``hold`` is the channel's hysteresis counter from the previous step.
    Returns the verdict plus the updated counter. Pure: same inputs, same
    outputs.
    """
    if raw_verdict(channel, p_pv, duty, cfg) is Verdict.ATTACK:
        return Verdict.ATTACK, cfg.hold_steps
    if hold > 0:
        return Verdict.ATTACK, hold - 1
    return Verdict.NORMAL, 0


class DetectorBank:
    """Per-channel hysteresis state for a running scenario."""

    def __init__(self, cfg: DetectorConfig):
        self.cfg = cfg
        self.hold = {ch: 0 for ch in CHANNELS}

    def step(self, p_pv: float, duties: DutySet) -> dict[str, Verdict]:
        """Classify every channel against the duties about to reach the plant."""
        verdicts = {}
        for ch in CHANNELS:
            verdict, self.hold[ch] = classify(
                ch, p_pv, duties.get(ch), self.cfg, self.hold[ch]
            )
            verdicts[ch] = verdict
        return verdicts
