"""Duty-cycle corruption: attack signal generation and scheduling.

An attacker who has compromised the station's controller firmware adds an
offset to one or more duty commands on their way to the converters. Two
signal shapes are modelled:

* ``held_random`` — a seeded pseudorandom value, redrawn every few control
  steps and held in between (low-frequency noise);
* ``const_bias`` — a fixed offset for the whole window.

Offsets are applied additively with a per-channel sign and the result is
clamped to the physical duty range. Everything is driven by a small
from-scratch PRNG (splitmix64 seeding a xoshiro256** core) so that attack
waveforms are bit-reproducible across platforms and numpy versions.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .plant import CHANNELS, DutySet

_MASK64 = (1 << 64) - 1


def _splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, (z ^ (z >> 31)) & _MASK64


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256StarStar:
    """Minimal xoshiro256** generator, state expanded from a 64-bit seed."""

    def __init__(self, seed: int):
        state = seed & _MASK64
        self._s = []
        for _ in range(4):
            state, out = _splitmix64(state)
            self._s.append(out)

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        """One double in [0, 1) using the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0**-53


def channel_seed(master_seed: int, channel: str) -> int:
    """Derive an independent per-channel stream seed from the master seed."""
    state = master_seed & _MASK64
    out = 0
    for _ in range(CHANNELS.index(channel) + 1):
        state, out = _splitmix64(state)
    return out


def prn_stream(seed: int, low: float, high: float, rep: int, n_steps: int) -> np.ndarray:
    """Sample-and-hold pseudorandom sequence.

    Draws uniform values in ``[low, high)`` and holds each for ``rep``
    consecutive steps; the holding is what gives the signal its
    low-frequency character.
    """
    if not low < high:
        raise ValueError("prn bounds must satisfy low < high")
    if rep < 1:
        raise ValueError("rep must be >= 1")
    gen = Xoshiro256StarStar(seed)
    n_draws = -(-n_steps // rep)
    draws = np.array([low + (high - low) * gen.uniform() for _ in range(n_draws)])
    return np.repeat(draws, rep)[:n_steps]


class AttackKind(enum.Enum):
    HELD_RANDOM = "held_random"
    CONST_BIAS = "const_bias"


class AttackTiming(enum.Enum):
    SIMULTANEOUS = "simultaneous"   # all channels hit in one shared window
    STAGGERED = "staggered"         # disjoint per-channel windows


def default_sign_map(kind: AttackKind) -> dict[str, float]:
    """Per-channel combination signs for each attack shape."""
    if kind is AttackKind.HELD_RANDOM:
        return {"pv": +1.0, "bes": -1.0, "ev": -1.0}
    return {"pv": -1.0, "bes": -1.0, "ev": -1.0}


@dataclass(frozen=True)
class AttackSpec:
    """Complete description of one attack campaign."""

    kind: AttackKind
    windows: dict[str, tuple[float, float]]     # channel -> (start, end) seconds
    sign_map: dict[str, float] = field(default_factory=dict)
    prn_low: float = 0.0
    prn_high: float = 1.0
    prn_rep: int = 10                           # hold length, control steps
    constant_c: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for ch in self.windows:
            if ch not in CHANNELS:
                raise ValueError(f"unknown channel {ch!r}")
            lo, hi = self.windows[ch]
            if not lo < hi:
                raise ValueError(f"window for {ch!r} must have start < end")
        if not self.prn_low < self.prn_high:
            raise ValueError("prn bounds must satisfy low < high")
        if self.prn_rep < 1:
            raise ValueError("prn_rep must be >= 1")
        if not self.sign_map:
            object.__setattr__(self, "sign_map", default_sign_map(self.kind))

    @property
    def targets(self) -> tuple[str, ...]:
        return tuple(ch for ch in CHANNELS if ch in self.windows)

    def horizon(self) -> float:
        """Latest window close, in seconds."""
        return max(end for _, end in self.windows.values())


def default_schedule(
    kind: AttackKind,
    timing: AttackTiming,
    seed: int = 0,
) -> AttackSpec:
    """Stock attack campaigns used throughout the project.

    Staggered timing hits the channels in disjoint 2 s windows (PV 5-7 s,
    BES 9-11 s, EV 13-15 s); simultaneous timing hits all three at 5-7 s.
    """
    if timing is AttackTiming.STAGGERED:
        windows = {"pv": (5.0, 7.0), "bes": (9.0, 11.0), "ev": (13.0, 15.0)}
    else:
        windows = {ch: (5.0, 7.0) for ch in CHANNELS}
    return AttackSpec(kind=kind, windows=windows, seed=seed)


class AttackInjector:
    """Applies an :class:`AttackSpec` to controller outputs, step by step.

    All pseudorandom material is precomputed at construction from the spec
    seed, so ``corrupt`` is a pure lookup and a campaign replays identically
    for the same spec.
    """

    def __init__(self, spec: AttackSpec, ts_control: float = 0.1):
        self.spec = spec
        self.ts = ts_control
        self._windows_steps: dict[str, tuple[int, int]] = {}
        self._offsets: dict[str, np.ndarray] = {}
        for ch, (start, end) in spec.windows.items():
            k0 = round(start / ts_control)
            k1 = round(end / ts_control)
            n = k1 - k0
            self._windows_steps[ch] = (k0, k1)
            if spec.kind is AttackKind.CONST_BIAS:
                values = np.full(n, spec.constant_c)
            else:
                values = prn_stream(
                    channel_seed(spec.seed, ch),
                    spec.prn_low, spec.prn_high, spec.prn_rep, n,
                )
            self._offsets[ch] = spec.sign_map[ch] * values

    def offset_at(self, step_index: int, channel: str) -> float:
        """Signed additive corruption for one channel at one control step."""
        if channel not in self._windows_steps:
            return 0.0
        k0, k1 = self._windows_steps[channel]
        if not k0 <= step_index < k1:
            return 0.0
        return float(self._offsets[channel][step_index - k0])

    def active(self, step_index: int, channel: str) -> bool:
        if channel not in self._windows_steps:
            return False
        k0, k1 = self._windows_steps[channel]
        return k0 <= step_index < k1

    def corrupt(self, duties: DutySet, step_index: int) -> DutySet:
        """Corrupted duties as they will reach the plant (clamped to [0,1])."""
        out = duties
        touched = False
        for ch in self._windows_steps:
            if self.active(step_index, ch):
                out = out.with_channel(ch, out.get(ch) + self.offset_at(step_index, ch))
                touched = True
        return out.clamped() if touched else duties
