"""Averaged-converter model of a standalone PV-fed EV charging station.

Topology: a PV array behind a boost stage, a stationary buffer battery (BES)
behind a bidirectional stage, and an EV battery behind a unidirectional buck
stage, all sharing one DC bus with a bleed load. Converters are modeled as
lossless averaged stages: each applies a command voltage to its inductor loop
and exchanges ``command voltage x inductor current`` with the bus.

Integration is forward Euler on a fixed fast substep; controllers act once per
(slower) control period. All state is float64 and every step is bit-exactly
reproducible.

Sign conventions: internal inductor currents ``il_*`` are positive when
charging the respective battery. Reported battery currents ``i_bes``/``i_ev``
are negated (charging shows as negative), matching the station's metering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace


class CalibrationError(ValueError):
    """Calibration targets are inconsistent or the fixed point did not settle."""


class NumericalDivergence(RuntimeError):
    """Integration produced a non-finite state or the bus left its safe range."""


#: Converter channel names, in canonical order (PV boost, storage battery, EV charger).
CHANNELS = ("pv", "bes", "ev")


@dataclass(frozen=True)
class DutySet:
    """Duty commands applied to the three converter stages for one control period."""

    d_pv: float
    d_bes: float
    d_ev: float

    def clamped(self, lo: float = 0.0, hi: float = 1.0) -> "DutySet":
        return DutySet(
            min(max(self.d_pv, lo), hi),
            min(max(self.d_bes, lo), hi),
            min(max(self.d_ev, lo), hi),
        )

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.d_pv, self.d_bes, self.d_ev)

    def get(self, channel: str) -> float:
        return getattr(self, f"d_{channel}")

    def with_channel(self, channel: str, value: float) -> "DutySet":
        return replace(self, **{f"d_{channel}": value})


@dataclass(frozen=True)
class PlantState:
    """Measured station state at the end of a control period."""

    t: float        # s, simulation time
    p_pv: float     # W, PV array output power
    v_bus: float    # V, DC bus voltage
    i_bes: float    # A, reported BES battery current (charging negative)
    v_bes: float    # V, BES battery terminal voltage
    i_ev: float     # A, reported EV battery current (charging negative)
    v_ev: float     # V, EV battery terminal voltage
    il_bes: float   # A, internal BES inductor current (charging positive)
    il_ev: float    # A, internal EV inductor current (charging positive, >= 0)


@dataclass(frozen=True)
class PlantParams:
    """Physical and numerical constants of the station model.

    Structural values (capacitance, inductances, series resistances, limits)
    are design choices; the starred entries are produced by ``calibrate_params``
    so that the nominal duty set reproduces the published operating medians.
    """

    ts_plant: float = 1e-3      # s, Euler substep
    ts_control: float = 0.1     # s, control period (duty updates)
    c_bus: float = 0.02         # F, bus capacitance
    l_bes: float = 5e-3         # H, BES inductor
    l_ev: float = 5e-3          # H, EV inductor
    r_bes: float = 0.29         # ohm, BES converter series resistance
    r_ev: float = 0.130782      # ohm, EV converter series resistance (*)
    r_load: float = 21.2        # ohm, bus bleed load (*)
    kappa_bes: float = 1.4537   # -, BES command-voltage gain: v_cmd = kappa*d*v_bus (*)
    pv_vmpp: float = 42.182     # V, PV voltage at maximum power (*)
    pv_pmpp: float = 1043.5996  # W, PV maximum power (*)
    pv_curve_shape: float = 14.0  # -, quadratic sharpness of the PV curve
    bes_voc: float = 51.9892    # V, BES open-circuit voltage (*)
    bes_rint: float = 0.01      # ohm, BES battery internal resistance
    ev_voc: float = 26.1259     # V, EV open-circuit voltage (*)
    ev_rint: float = 0.01       # ohm, EV battery internal resistance
    bes_i_max: float = 50.0     # A, BES converter current limit (bidirectional)
    ev_i_max: float = 50.0      # A, EV converter current limit (charge only)
    duty_min: float = 0.0
    duty_max: float = 1.0
    v_bus_nom: float = 52.7605  # V, nominal bus voltage (divergence reference)
    v_floor: float = 1.0        # V, floor for the bus-power division
    d_pv_nom: float = 0.2005    # nominal duty commands at the operating point
    d_bes_nom: float = 0.705
    d_ev_nom: float = 0.545

    @property
    def substeps_per_control(self) -> int:
        return round(self.ts_control / self.ts_plant)

    def nominal_duties(self) -> DutySet:
        return DutySet(self.d_pv_nom, self.d_bes_nom, self.d_ev_nom)


@dataclass(frozen=True)
class CalibrationTargets:
    """Published steady-state medians plus the duty set that produces them."""

    p_pv: float = 1043.5996     # W
    v_bus: float = 52.7605      # V
    i_bes: float = -6.9452      # A (charging negative)
    v_bes: float = 52.0587      # V
    i_ev: float = -18.6713      # A
    v_ev: float = 26.3126       # V
    d_pv: float = 0.2005
    d_bes: float = 0.705
    d_ev: float = 0.545


DEFAULT_TARGETS = CalibrationTargets()


def pv_power(params: PlantParams, v_pv: float) -> float:
    """Concave quadratic PV curve peaking at (pv_vmpp, pv_pmpp), clamped at 0."""
    rel = (v_pv - params.pv_vmpp) / params.pv_vmpp
    p = params.pv_pmpp * (1.0 - params.pv_curve_shape * rel * rel)
    return p if p > 0.0 else 0.0


def calibrate_params(
    targets: CalibrationTargets = DEFAULT_TARGETS,
    base: PlantParams | None = None,
) -> PlantParams:
    """Solve the free plant constants so the target medians are a fixed point.

    Given the structural constants in ``base``, the steady-state loop and bus
    equations have a closed-form solution for the PV peak, the BES gain and
    open-circuit voltage, the EV loop resistance and open-circuit voltage, and
    the bleed load. The result is verified by evaluating the state derivatives
    at the target point.
    """
    p = base if base is not None else PlantParams()
    il_bes = -targets.i_bes  # internal charging-positive currents
    il_ev = -targets.i_ev
    if il_ev <= 0.0 or il_bes <= 0.0:
        raise CalibrationError("targets must describe both batteries charging")
    if targets.v_bus <= 0.0 or targets.p_pv <= 0.0:
        raise CalibrationError("bus voltage and PV power targets must be positive")
    if targets.v_bes <= 0.0 or targets.v_ev <= 0.0:
        raise CalibrationError("battery terminal voltage targets must be positive")

    # PV boost: the array sits at its peak at the nominal duty.
    pv_vmpp = (1.0 - targets.d_pv) * targets.v_bus
    pv_pmpp = targets.p_pv

    # BES loop steady state: kappa*d*v_bus = v_bes + r_bes*il.
    v_cmd_bes = targets.v_bes + p.r_bes * il_bes
    kappa_bes = v_cmd_bes / (targets.d_bes * targets.v_bus)
    bes_voc = targets.v_bes - p.bes_rint * il_bes

    # EV loop steady state: d*v_bus = v_ev + r_ev*il fixes the converter-side
    # drop; the battery split keeps its structural internal resistance.
    v_cmd_ev = targets.d_ev * targets.v_bus
    r_ev = (v_cmd_ev - targets.v_ev) / il_ev
    ev_voc = targets.v_ev - p.ev_rint * il_ev
    if r_ev <= 0.0:
        raise CalibrationError("EV loop needs v_ev below the command voltage")

    # Bus balance: whatever PV power the converters do not take goes to the
    # bleed load, which sets its resistance.
    p_bes_bus = v_cmd_bes * il_bes
    p_ev_bus = v_cmd_ev * il_ev
    p_bleed = targets.p_pv - p_bes_bus - p_ev_bus
    if p_bleed <= 0.0:
        raise CalibrationError("converters absorb more than the PV array produces")
    r_load = targets.v_bus**2 / p_bleed

    if il_bes > p.bes_i_max or il_ev > p.ev_i_max:
        raise CalibrationError("target currents exceed converter limits")

    cal = replace(
        p,
        pv_vmpp=pv_vmpp,
        pv_pmpp=pv_pmpp,
        kappa_bes=kappa_bes,
        bes_voc=bes_voc,
        r_ev=r_ev,
        ev_voc=ev_voc,
        r_load=r_load,
        v_bus_nom=targets.v_bus,
        d_pv_nom=targets.d_pv,
        d_bes_nom=targets.d_bes,
        d_ev_nom=targets.d_ev,
    )

    # Residual check: all state derivatives must vanish at the target point.
    dv, dib, die = _derivatives(cal, targets.v_bus, il_bes, il_ev, cal.nominal_duties())
    residual = max(abs(dv), abs(dib), abs(die))
    if residual > 1e-6:
        raise CalibrationError(f"fixed-point residual {residual:.3e} exceeds 1e-6")
    return cal


def _derivatives(
    p: PlantParams, v_bus: float, il_bes: float, il_ev: float, d: DutySet
) -> tuple[float, float, float]:
    """Continuous-time state derivatives (dv_bus, dil_bes, dil_ev)."""
    v_pv = (1.0 - d.d_pv) * v_bus
    p_pv = pv_power(p, v_pv)
    v_cmd_bes = p.kappa_bes * d.d_bes * v_bus
    v_cmd_ev = d.d_ev * v_bus
    v_bes = p.bes_voc + p.bes_rint * il_bes
    v_ev = p.ev_voc + p.ev_rint * il_ev
    dil_bes = (v_cmd_bes - v_bes - p.r_bes * il_bes) / p.l_bes
    dil_ev = (v_cmd_ev - v_ev - p.r_ev * il_ev) / p.l_ev
    p_net = p_pv - v_cmd_bes * il_bes - v_cmd_ev * il_ev - v_bus * v_bus / p.r_load
    dv_bus = p_net / (p.c_bus * max(v_bus, p.v_floor))
    return dv_bus, dil_bes, dil_ev


def _observe(p: PlantParams, t: float, v_bus: float, il_bes: float, il_ev: float,
             d: DutySet) -> PlantState:
    v_pv = (1.0 - d.d_pv) * v_bus
    return PlantState(
        t=t,
        p_pv=pv_power(p, v_pv),
        v_bus=v_bus,
        i_bes=-il_bes,
        v_bes=p.bes_voc + p.bes_rint * il_bes,
        i_ev=-il_ev,
        v_ev=p.ev_voc + p.ev_rint * il_ev,
        il_bes=il_bes,
        il_ev=il_ev,
    )


def step(params: PlantParams, state: PlantState, duties: DutySet) -> PlantState:
    """Advance the plant by one control period under constant duty commands.

    Duties are clamped to the converter range at the plant boundary. Raises
    :class:`NumericalDivergence` if the state leaves its safe envelope.
    """
    d = duties.clamped(params.duty_min, params.duty_max)
    v = state.v_bus
    ib = state.il_bes
    ie = state.il_ev
    dt = params.ts_plant
    v_limit = 10.0 * params.v_bus_nom
    for _ in range(params.substeps_per_control):
        dv, dib, die = _derivatives(params, v, ib, ie, d)
        v += dt * dv
        ib += dt * dib
        ie += dt * die
        # converter current limits; EV stage is unidirectional
        if ib > params.bes_i_max:
            ib = params.bes_i_max
        elif ib < -params.bes_i_max:
            ib = -params.bes_i_max
        if ie < 0.0:
            ie = 0.0
        elif ie > params.ev_i_max:
            ie = params.ev_i_max
        if v < 0.0:
            v = 0.0
        if not (math.isfinite(v) and math.isfinite(ib) and math.isfinite(ie)):
            raise NumericalDivergence(f"non-finite state at t={state.t:.3f}s")
        if v > v_limit:
            raise NumericalDivergence(
                f"bus voltage {v:.1f} V exceeded {v_limit:.1f} V at t={state.t:.3f}s"
            )
    return _observe(params, state.t + params.ts_control, v, ib, ie, d)


def nominal_operating_point(
    params: PlantParams, max_substeps: int = 100_000
) -> tuple[PlantState, DutySet]:
    """Return the steady operating state under the nominal duty commands.

    Starts from the calibrated algebraic solution and lets the plant settle
    until every state derivative is negligible; raises
    :class:`CalibrationError` if that takes more than ``max_substeps``.
    """
    d = params.nominal_duties()
    v = params.v_bus_nom
    # Algebraic loop solutions for the inductor currents at the nominal point.
    ib = (params.kappa_bes * d.d_bes * v - params.bes_voc) / (params.r_bes + params.bes_rint)
    ie = (d.d_ev * v - params.ev_voc) / (params.r_ev + params.ev_rint)
    ie = max(ie, 0.0)
    dt = params.ts_plant
    tol = 1e-9
    for n in range(max_substeps):
        dv, dib, die = _derivatives(params, v, ib, ie, d)
        if abs(dv) < tol and abs(dib) < tol and abs(die) < tol:
            return _observe(params, 0.0, v, ib, ie, d), d
        v += dt * dv
        ib += dt * dib
        ie += dt * die
        if not (math.isfinite(v) and math.isfinite(ib) and math.isfinite(ie)):
            raise CalibrationError("nominal-point settling diverged")
    raise CalibrationError(f"nominal point failed to settle within {max_substeps} substeps")


def perturbed_start(
    params: PlantParams,
    bus_factor: float = 1.0,
    bes_factor: float = 1.0,
    ev_factor: float = 1.0,
) -> PlantState:
    """Nominal operating state with multiplicative offsets applied.

    Used to randomize training episodes: the bus voltage and the two converter
    currents are scaled, everything else follows from the model equations.
    """
    nominal, d = nominal_operating_point(params)
    return _observe(
        params,
        0.0,
        nominal.v_bus * bus_factor,
        nominal.il_bes * bes_factor,
        nominal.il_ev * ev_factor,
        d,
    )
