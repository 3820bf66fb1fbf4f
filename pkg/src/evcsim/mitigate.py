"""Mitigation routing for the charging station's three duty channels.

While a channel's detector reports normal operation its (possibly corrupted)
legacy command passes straight to the plant. The moment the verdict flips,
the router substitutes a trusted duty from the channel's configured strategy:
a fixed table value, a freshly instantiated controller clone fed live
measurements, or a trained TD3 policy. The compromised legacy controller is
re-synchronized to the routed trajectory on every mitigated step, so handing
control back after the verdict clears produces no transient.

Strategy sources never see the corrupted signal — they work from the true
plant measurements only.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .attack import AttackInjector, AttackSpec
from .controllers import ControlConfig, LegacyControllers, References, clone_controllers
from .detect import DetectorBank, DetectorConfig, Verdict
from .plant import (
    CHANNELS,
    DutySet,
    NumericalDivergence,
    PlantParams,
    PlantState,
    nominal_operating_point,
    step,
)
from .td3 import AgentBundle, observe


class MissingAgent(Exception):
    """A channel is configured for TD3 mitigation but has no trained bundle."""


class Strategy(enum.Enum):
    """Where a channel's duty comes from while its detector reports an attack."""

    LEGACY_ONLY = "legacy"        # no mitigation: corrupted signal passes
    BRUTE_FORCE = "brute_force"   # fixed design-point duty from the table
    CLONE = "clone"               # fresh controller instance, live measurements
    TD3 = "td3"                   # trained policy with supervisory envelope


@dataclass(frozen=True)
class BruteForceTable:
    """Constant fallback duties per channel."""

    d_pv: float = 0.2
    d_bes: float = 0.7
    d_ev: float = 0.55

    def __post_init__(self):
        for name, v in (("d_pv", self.d_pv), ("d_bes", self.d_bes), ("d_ev", self.d_ev)):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} outside duty bounds: {v}")

    def get(self, channel: str) -> float:
        return {"pv": self.d_pv, "bes": self.d_bes, "ev": self.d_ev}[channel]


@dataclass(frozen=True)
class StrategyMap:
    """One mitigation choice per channel."""

    pv: Strategy = Strategy.TD3
    bes: Strategy = Strategy.TD3
    ev: Strategy = Strategy.TD3

    def get(self, channel: str) -> Strategy:
        return {"pv": self.pv, "bes": self.bes, "ev": self.ev}[channel]

    @classmethod
    def uniform(cls, strategy: Strategy) -> "StrategyMap":
        return cls(pv=strategy, bes=strategy, ev=strategy)

    @classmethod
    def from_names(cls, names: dict[str, str]) -> "StrategyMap":
        choices = {ch: Strategy(names.get(ch, "td3")) for ch in CHANNELS}
        return cls(pv=choices["pv"], bes=choices["bes"], ev=choices["ev"])


def route(
    channel: str,
    verdict: Verdict,
    strategy: Strategy,
    legacy_duty: float,
    mitigation_duty: float | None = None,
) -> float:
    """Pick the duty that reaches the plant this step, clamped to [0, 1].

    A normal verdict passes the legacy signal through untouched; an attack
    verdict substitutes the strategy's duty, which the caller computes from
    trusted measurements.
    """
    if channel not in CHANNELS:
        raise ValueError(f"unknown channel {channel!r}")
    if verdict == Verdict.NORMAL or strategy == Strategy.LEGACY_ONLY:
        out = legacy_duty
    else:
        if mitigation_duty is None:
            if strategy == Strategy.TD3:
                raise MissingAgent(f"no trained bundle for channel {channel!r}")
            raise ValueError(f"no mitigation duty supplied for {channel!r}")
        out = mitigation_duty
    return min(max(out, 0.0), 1.0)


# Supervisory trust envelope around the policy output, in units of the
# agent's scaled observation. Three failure modes of a bare policy are
# fenced off. At zero error evidence the routed duty is pinned to the
# channel's design duty — the plant's own stable fixed point — because a
# detector can fire while the state is still nominal (hysteresis tails,
# zero-latency predicates) and policies are poorly constrained there:
# training episodes always open displaced, so no constant slack is added
# either (a fixed opening at zero error would let a wrong policy walk the
# bus away through the error→envelope feedback loop). Far outside the
# training range the saturated policy head turns bang-bang and over-drives
# the converters, so authority is capped at a fixed duty deviation; within
# the cap the plant's own stability dominates the large transient and the
# policy supplies the fine regulation it actually learned. Finally, on the
# voltage channels the correcting direction is a fixed plant property —
# raising the storage duty draws more charge and pulls the bus down,
# raising the charger duty lifts the EV terminal voltage — so deviations
# against that direction get only a sliver of room: a policy that is wrong
# near an operating point it rarely visited cannot park the plant off its
# set-point. The PV channel has no correcting direction (array power is
# concave in its duty, peaked at the reference) and keeps a symmetric but
# tighter cap.
_ENVELOPE_ERR_GAIN = 2.0
_ENVELOPE_INT_GAIN = 1.0
_ENVELOPE_MAX = {"pv": 0.005, "bes": 0.01, "ev": 0.01}
_ENVELOPE_WRONG_SIDE = 5e-4
# sign of the duty deviation that increases the channel's error e = ref − y
_ACTUATION_SIGN = {"bes": 1.0, "ev": -1.0}


def envelope_bounds(channel: str, e: float, e_int: float,
                    obs_scale: tuple[float, float], duty_ref: float) -> tuple[float, float]:
    """Allowed duty interval for a policy given current error evidence."""
    se, si = obs_scale
    radius = min(
        _ENVELOPE_ERR_GAIN * abs(e * se) + _ENVELOPE_INT_GAIN * abs(e_int * si),
        _ENVELOPE_MAX[channel],
    )
    if channel == "pv":
        lo, hi = duty_ref - radius, duty_ref + radius
    else:
        sliver = min(radius, _ENVELOPE_WRONG_SIDE)
        # deviation that shrinks |e| has sign -_ACTUATION_SIGN * sign(e)
        correcting = -_ACTUATION_SIGN[channel] * np.sign(e)
        if correcting > 0:
            lo, hi = duty_ref - sliver, duty_ref + radius
        elif correcting < 0:
            lo, hi = duty_ref - radius, duty_ref + sliver
        else:
            lo, hi = duty_ref - sliver, duty_ref + sliver
    return max(lo, 0.0), min(hi, 1.0)


class Td3Source:
    """Engagement-aware wrapper turning a trained bundle into a duty source.

    The error integral starts fresh at each engagement, integrates while
    engaged, and is discarded at handback — matching how training episodes
    begin. ``duty`` must be called once per engaged control step.
    """

    def __init__(self, bundle: AgentBundle, refs: References, ts: float):
        self.bundle = bundle
        self.refs = refs
        self.ts = ts
        self._e_int = 0.0

    def reset(self) -> None:
        self._e_int = 0.0

    def duty(self, state: PlantState) -> float:
        cfg = self.bundle.cfg
        obs = observe(cfg.channel, state, self.refs, self._e_int, self.ts)
        self._e_int = obs.e_int
        raw = self.bundle.policy(obs)
        lo, hi = envelope_bounds(
            cfg.channel, obs.e, obs.e_int, cfg.obs_scale, cfg.duty_ref
        )
        return min(max(raw, lo), hi)


@dataclass
class RunLog:
    """Everything observable about one closed-loop run, one row per step.

    Plant columns hold the measurement the controllers acted on (the state at
    the start of the step); duties and verdicts are the decisions taken on it.
    """

    ts: float
    windows: dict[str, tuple[float, float]]
    t: list[float] = field(default_factory=list)
    legacy: dict[str, list[float]] = field(default_factory=lambda: {c: [] for c in CHANNELS})
    attacked: dict[str, list[float]] = field(default_factory=lambda: {c: [] for c in CHANNELS})
    routed: dict[str, list[float]] = field(default_factory=lambda: {c: [] for c in CHANNELS})
    verdicts: dict[str, list[Verdict]] = field(default_factory=lambda: {c: [] for c in CHANNELS})
    p_pv: list[float] = field(default_factory=list)
    v_bus: list[float] = field(default_factory=list)
    i_bes: list[float] = field(default_factory=list)
    v_bes: list[float] = field(default_factory=list)
    i_ev: list[float] = field(default_factory=list)
    v_ev: list[float] = field(default_factory=list)
    diverged: bool = False

    def __len__(self) -> int:
        return len(self.t)

    def append(
        self,
        t: float,
        state: PlantState,
        legacy: DutySet,
        attacked: DutySet,
        routed: DutySet,
        verdicts: dict[str, Verdict],
    ) -> None:
        self.t.append(t)
        for ch in CHANNELS:
            self.legacy[ch].append(legacy.get(ch))
            self.attacked[ch].append(attacked.get(ch))
            self.routed[ch].append(routed.get(ch))
            self.verdicts[ch].append(verdicts[ch])
        self.p_pv.append(state.p_pv)
        self.v_bus.append(state.v_bus)
        self.i_bes.append(state.i_bes)
        self.v_bes.append(state.v_bes)
        self.i_ev.append(state.i_ev)
        self.v_ev.append(state.v_ev)

    def signal(self, name: str) -> list[float]:
        """One plant measurement column by its CSV name."""
        return {
            "p_pv": self.p_pv, "v_bus": self.v_bus, "i_bes": self.i_bes,
            "v_bes": self.v_bes, "i_ev": self.i_ev, "v_ev": self.v_ev,
        }[name]

    def mitigated_mask(self) -> list[bool]:
        """Steps where any channel's routing replaced the legacy path."""
        out = []
        for k in range(len(self.t)):
            out.append(
                any(
                    self.verdicts[ch][k] == Verdict.ATTACK
                    and self.routed[ch][k] != self.attacked[ch][k]
                    for ch in CHANNELS
                )
            )
        return out


class DivergedRun(Exception):
    """Plant blew past its divergence guard; carries the log up to failure."""

    def __init__(self, log: RunLog, step_index: int):
        super().__init__(f"plant diverged at step {step_index} (t={log.ts * step_index:.1f} s)")
        self.log = log
        self.step_index = step_index


def run_mitigated(
    params: PlantParams,
    attack: AttackSpec,
    strategies: StrategyMap | None = None,
    bundles: dict[str, AgentBundle] | None = None,
    detector_cfg: DetectorConfig | None = None,
    control_cfg: ControlConfig | None = None,
    table: BruteForceTable | None = None,
    duration: float = 17.0,
    start: PlantState | None = None,
) -> RunLog:
    """Closed loop: legacy control → corruption → detection → routing → plant.

    Runs from the nominal operating point (or ``start``) for ``duration``
    seconds of control steps and returns the full log. Divergence raises
    :class:`DivergedRun` carrying the partial log.
    """
    strategies = strategies or StrategyMap()
    bundles = bundles or {}
    table = table or BruteForceTable()
    control_cfg = control_cfg or ControlConfig(refs=References.from_plant(params))
    refs = control_cfg.refs
    ts = params.ts_control

    for ch in CHANNELS:
        if strategies.get(ch) == Strategy.TD3 and ch not in bundles:
            raise MissingAgent(f"no trained bundle for channel {ch!r}")

    legacy = LegacyControllers.from_nominal(control_cfg, params)
    bank = DetectorBank(detector_cfg or DetectorConfig())
    injector = AttackInjector(attack, ts_control=ts)
    sources = {
        ch: Td3Source(bundles[ch], refs, ts)
        for ch in CHANNELS
        if strategies.get(ch) == Strategy.TD3
    }
    clones: dict[str, LegacyControllers] = {}
    engaged = {ch: False for ch in CHANNELS}

    if start is None:
        start, _ = nominal_operating_point(params)
    state = start
    n_steps = int(round(duration / ts))
    log = RunLog(ts=ts, windows=dict(attack.windows))

    for k in range(n_steps):
        legacy_d = DutySet(
            legacy.step_pv(state),
            legacy.step_bes(state, ts),
            legacy.step_ev(state, ts),
        )
        attacked = injector.corrupt(legacy_d, k)
        verdicts = bank.step(state.p_pv, attacked)

        routed = {}
        for ch in CHANNELS:
            strat = strategies.get(ch)
            if verdicts[ch] == Verdict.ATTACK and strat != Strategy.LEGACY_ONLY:
                if strat == Strategy.BRUTE_FORCE:
                    m = table.get(ch)
                elif strat == Strategy.CLONE:
                    if ch not in clones:  # lazy: built at first attack verdict
                        clones[ch] = clone_controllers(control_cfg, params)
                    c = clones[ch]
                    m = (
                        c.step_pv(state) if ch == "pv"
                        else c.step_bes(state, ts) if ch == "bes"
                        else c.step_ev(state, ts)
                    )
                else:
                    src = sources[ch]
                    if not engaged[ch]:
                        src.reset()
                    m = src.duty(state)
                d = route(ch, verdicts[ch], strat, attacked.get(ch), m)
                # Re-synchronize the compromised controller to the routed
                # trajectory so handback continues without a transient.
                if ch == "pv":
                    legacy.reseed_pv(d)
                elif ch == "bes":
                    legacy.reseed_bes(d, refs.v_bus - state.v_bus)
                else:
                    legacy.reseed_ev(d, refs.v_ev - state.v_ev)
                engaged[ch] = True
            else:
                d = route(ch, Verdict.NORMAL, strat, attacked.get(ch))
                if engaged[ch]:  # handback: drop per-engagement state
                    clones.pop(ch, None)
                    engaged[ch] = False
            routed[ch] = d

        routed_set = DutySet(routed["pv"], routed["bes"], routed["ev"])
        log.append(k * ts, state, legacy_d, attacked, routed_set, verdicts)
        try:
            state = step(params, state, routed_set)
        except NumericalDivergence:
            log.diverged = True
            raise DivergedRun(log, k) from None

    return log
