"""Baseline station controllers: perturb-and-observe MPPT for the PV boost
stage and PI voltage regulators for the BES and EV stages.

These are the controllers an unprotected station runs. They are deliberately
simple and stateful; the mitigation layer can instantiate fresh copies
("clones") that boot exactly like the station's own controllers do.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .plant import DutySet, PlantParams, PlantState


@dataclass(frozen=True)
class References:
    """Regulation set-points shared by controllers and learned agents."""

    p_pv: float = 1043.5996   # W, PV power target (array peak)
    v_bus: float = 52.7605    # V, DC bus set-point
    v_ev: float = 26.3126     # V, EV battery terminal set-point

    @classmethod
    def from_plant(cls, params: PlantParams) -> "References":
        nominal_ev_i = (params.d_ev_nom * params.v_bus_nom - params.ev_voc) / (
            params.r_ev + params.ev_rint
        )
        return cls(
            p_pv=params.pv_pmpp,
            v_bus=params.v_bus_nom,
            v_ev=params.ev_voc + params.ev_rint * nominal_ev_i,
        )


@dataclass(frozen=True)
class MpptState:
    """Perturb-and-observe tracker state."""

    duty: float
    last_power: float
    direction: float = 1.0
    step_size: float = 5e-5


def mppt_step(state: MpptState, p_pv: float, lo: float = 0.0, hi: float = 1.0
              ) -> tuple[MpptState, float]:
    """One perturb-and-observe update.

    If power rose since the previous step the perturbation direction is kept,
    otherwise it flips; the duty always moves by exactly one step before
    clamping.
    """
    direction = state.direction if p_pv > state.last_power else -state.direction
    duty = min(max(state.duty + direction * state.step_size, lo), hi)
    return MpptState(duty, p_pv, direction, state.step_size), duty


@dataclass(frozen=True)
class PiState:
    """Discrete PI regulator with conditional-integration anti-windup and an
    optional output slew-rate limit.

    The slew limit (duty per second) keeps the loop well behaved when the
    operating point is thrown far from the set-point: the plant gain seen by
    the regulator grows several-fold near the converter current limits, and an
    unrestricted PI would bang between them.
    """

    kp: float
    ki: float
    integ: float = 0.0
    out_min: float = 0.0
    out_max: float = 1.0
    anti_windup: bool = True
    last_out: float = 0.0
    max_slew: float | None = None


def pi_step(state: PiState, error: float, ts: float) -> tuple[PiState, float]:
    """One PI update; the integrator holds whenever the output is limited."""
    cand = state.integ + error * ts
    raw = state.kp * error + state.ki * cand
    lo, hi = state.out_min, state.out_max
    if state.max_slew is not None:
        lo = max(lo, state.last_out - state.max_slew * ts)
        hi = min(hi, state.last_out + state.max_slew * ts)
    if raw > hi:
        out, limited = hi, True
    elif raw < lo:
        out, limited = lo, True
    else:
        out, limited = raw, False
    integ = state.integ if (limited and state.anti_windup) else cand
    return replace(state, integ=integ, last_out=out), out


def pi_seeded(state: PiState, duty: float, error: float) -> PiState:
    """Re-seed the integrator so the next output at ``error`` equals ``duty``."""
    if state.ki == 0.0:
        return replace(state, last_out=duty)
    return replace(state, integ=(duty - state.kp * error) / state.ki, last_out=duty)


@dataclass
class ControlConfig:
    """Gains and set-points for the legacy controllers (shipped defaults)."""

    refs: References = field(default_factory=References)
    mppt_step_size: float = 5e-5
    mppt_duty_init: float = 0.2
    # Negative BES gains: raising the BES duty raises the charge power drawn
    # from the bus, which lowers bus voltage, i.e. duty must move against the
    # (set-point minus measurement) error.
    kp_bes: float = -0.007
    ki_bes: float = -0.11
    kp_ev: float = 0.12
    ki_ev: float = 0.8
    pi_slew: float | None = 0.5   # duty per second; None disables limiting
    duty_min: float = 0.0
    duty_max: float = 1.0


class LegacyControllers:
    """Stateful bundle of the three channel controllers.

    Channels are advanced individually so callers can interleave re-seeding
    (mitigation handback) with normal stepping.
    """

    def __init__(self, cfg: ControlConfig, mppt: MpptState, pi_bes: PiState, pi_ev: PiState):
        self.cfg = cfg
        self.mppt = mppt
        self.pi_bes = pi_bes
        self.pi_ev = pi_ev

    @classmethod
    def fresh(cls, cfg: ControlConfig) -> "LegacyControllers":
        """Cold-start controllers: zeroed integrators, MPPT at its initial duty."""
        return cls(
            cfg,
            MpptState(cfg.mppt_duty_init, 0.0, 1.0, cfg.mppt_step_size),
            PiState(cfg.kp_bes, cfg.ki_bes, out_min=cfg.duty_min,
                    out_max=cfg.duty_max, max_slew=cfg.pi_slew),
            PiState(cfg.kp_ev, cfg.ki_ev, out_min=cfg.duty_min,
                    out_max=cfg.duty_max, max_slew=cfg.pi_slew),
        )

    @classmethod
    def from_nominal(cls, cfg: ControlConfig, params: PlantParams) -> "LegacyControllers":
        """Controllers pre-settled at the plant's nominal operating point."""
        ctl = cls.fresh(cfg)
        ctl.mppt = MpptState(params.d_pv_nom, params.pv_pmpp, 1.0, cfg.mppt_step_size)
        ctl.pi_bes = pi_seeded(ctl.pi_bes, params.d_bes_nom, 0.0)
        ctl.pi_ev = pi_seeded(ctl.pi_ev, params.d_ev_nom, 0.0)
        return ctl

    # ------------------------------------------------------------- stepping

    def step_pv(self, meas: PlantState) -> float:
        self.mppt, duty = mppt_step(self.mppt, meas.p_pv, self.cfg.duty_min, self.cfg.duty_max)
        return duty

    def step_bes(self, meas: PlantState, ts: float) -> float:
        self.pi_bes, duty = pi_step(self.pi_bes, self.cfg.refs.v_bus - meas.v_bus, ts)
        return duty

    def step_ev(self, meas: PlantState, ts: float) -> float:
        self.pi_ev, duty = pi_step(self.pi_ev, self.cfg.refs.v_ev - meas.v_ev, ts)
        return duty

    def step(self, meas: PlantState, ts: float) -> DutySet:
        return DutySet(self.step_pv(meas), self.step_bes(meas, ts), self.step_ev(meas, ts))

    # ------------------------------------------------------------ re-seeding

    def reseed_pv(self, duty: float) -> None:
        self.mppt = replace(self.mppt, duty=duty)

    def reseed_bes(self, duty: float, error: float) -> None:
        self.pi_bes = pi_seeded(self.pi_bes, duty, error)

    def reseed_ev(self, duty: float, error: float) -> None:
        self.pi_ev = pi_seeded(self.pi_ev, duty, error)

def clone_controllers(cfg: ControlConfig, params: PlantParams) -> LegacyControllers:
    """Mitigation clone factory.

    The clone is an independent copy of the legacy controller stack, booted
    the same way the station's own controllers boot: set-points from ``cfg``
    and integrators seeded at the design-point duties. It holds no runtime
    state from the compromised controllers and never observes their outputs.
    """
    return LegacyControllers.from_nominal(cfg, params)
