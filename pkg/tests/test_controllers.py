"""Legacy controller tests.

Groups:
  * mppt — perturb-and-observe stepping rules
  * pi — discrete PI arithmetic, anti-windup, slew limiting, re-seeding
  * closed loop — regulation bands, set-point medians, settling behaviour
  * clone — fresh-controller recovery from post-attack operating points
"""

import numpy as np
import pytest

from evcsim.controllers import (
    ControlConfig,
    LegacyControllers,
    MpptState,
    PiState,
    References,
    clone_controllers,
    mppt_step,
    pi_seeded,
    pi_step,
)
from evcsim.plant import DutySet, calibrate_params, nominal_operating_point, perturbed_start, step

TS = 0.1


@pytest.fixture(scope="module")
def plant():
    return calibrate_params()


@pytest.fixture()
def cfg(plant):
    return ControlConfig(refs=References.from_plant(plant))


# --------------------------------------------------------------------- mppt


def test_mppt_keeps_direction_when_power_rises():
    s = MpptState(duty=0.5, last_power=100.0, direction=1.0, step_size=0.01)
    s2, duty = mppt_step(s, 101.0)
    assert duty == pytest.approx(0.51)
    assert s2.direction == 1.0
    assert s2.last_power == 101.0


def test_mppt_flips_direction_when_power_falls():
    s = MpptState(duty=0.5, last_power=100.0, direction=1.0, step_size=0.01)
    s2, duty = mppt_step(s, 99.0)
    assert duty == pytest.approx(0.49)
    assert s2.direction == -1.0


def test_mppt_clamps_at_bounds():
    s = MpptState(duty=0.999, last_power=1.0, direction=1.0, step_size=0.01)
    _, duty = mppt_step(s, 2.0)
    assert duty == 1.0


# ----------------------------------------------------------------------- pi


def test_pi_unsaturated_arithmetic():
    s = PiState(kp=2.0, ki=1.0, integ=0.3, out_min=0.0, out_max=2.0)
    s2, out = pi_step(s, 0.5, TS)
    # integrator candidate 0.3 + 0.05, output 2*0.5 + 1*0.35
    assert out == pytest.approx(1.35)
    assert s2.integ == pytest.approx(0.35)
    assert s2.last_out == pytest.approx(1.35)


def test_pi_saturation_holds_integrator():
    s = PiState(kp=2.0, ki=1.0, integ=0.3, out_min=0.0, out_max=1.0)
    s2, out = pi_step(s, 0.5, TS)
    assert out == 1.0
    assert s2.integ == 0.3


def test_pi_without_anti_windup_accumulates():
    s = PiState(kp=2.0, ki=1.0, integ=0.3, out_min=0.0, out_max=1.0, anti_windup=False)
    s2, out = pi_step(s, 0.5, TS)
    assert out == 1.0
    assert s2.integ == pytest.approx(0.35)


def test_pi_slew_limits_output_change():
    s = PiState(kp=1.0, ki=0.0, integ=0.0, last_out=0.2, max_slew=0.5)
    s2, out = pi_step(s, 0.9, TS)  # raw would be 0.9, limit is 0.2 + 0.05
    assert out == pytest.approx(0.25)
    s3, out2 = pi_step(s2, -0.9, TS)  # raw -0.9 -> floor at 0.25 - 0.05
    assert out2 == pytest.approx(0.20)


def test_pi_slew_holds_integrator_when_limiting():
    s = PiState(kp=0.0, ki=1.0, integ=0.0, last_out=0.0, max_slew=0.1)
    s2, out = pi_step(s, 5.0, TS)  # raw 0.5, slew cap 0.01
    assert out == pytest.approx(0.01)
    assert s2.integ == 0.0


def test_pi_seeded_reproduces_duty():
    s = PiState(kp=-0.007, ki=-0.11)
    seeded = pi_seeded(s, 0.705, 0.02)
    _, out = pi_step(seeded, 0.02, TS)
    # seeding targets the pre-integration output; one step adds ki*e*ts
    assert out == pytest.approx(0.705 + s.ki * 0.02 * TS, abs=1e-12)
    assert seeded.last_out == 0.705


# --------------------------------------------------------------- closed loop


def run_loop(plant, ctl, s, n):
    rows = []
    for _ in range(n):
        d = ctl.step(s, TS)
        s = step(plant, s, d)
        rows.append((d.d_pv, d.d_bes, d.d_ev, s.p_pv, s.v_bus, s.i_bes,
                     s.v_bes, s.i_ev, s.v_ev))
    return np.asarray(rows), s


def test_nominal_hold_keeps_duties_in_bands(plant, cfg):
    s, _ = nominal_operating_point(plant)
    ctl = LegacyControllers.from_nominal(cfg, plant)
    a, _ = run_loop(plant, ctl, s, 170)
    assert a[:, 0].min() > 0.200 and a[:, 0].max() < 0.201
    assert a[:, 1].min() > 0.700 and a[:, 1].max() < 0.710
    assert a[:, 2].min() > 0.540 and a[:, 2].max() < 0.550


def test_nominal_hold_medians_match_targets(plant, cfg):
    s, _ = nominal_operating_point(plant)
    ctl = LegacyControllers.from_nominal(cfg, plant)
    a, _ = run_loop(plant, ctl, s, 170)
    med = np.median(a[:, 3:], axis=0)
    expect = (1043.5996, 52.7605, -6.9452, 52.0587, -18.6713, 26.3126)
    assert np.allclose(med, expect, atol=1e-3)


def test_bus_disturbance_settles_within_two_seconds(plant, cfg):
    s = perturbed_start(plant, bus_factor=1.05)
    ctl = LegacyControllers.from_nominal(cfg, plant)
    a, _ = run_loop(plant, ctl, s, 30)
    assert np.all(np.abs(a[20:, 4] - cfg.refs.v_bus) < 0.05)


def test_ev_disturbance_settles_within_two_seconds(plant, cfg):
    s = perturbed_start(plant, ev_factor=0.7)
    ctl = LegacyControllers.from_nominal(cfg, plant)
    a, _ = run_loop(plant, ctl, s, 30)
    assert np.all(np.abs(a[20:, 8] - cfg.refs.v_ev) < 0.01)
    assert np.all(np.abs(a[20:, 4] - cfg.refs.v_bus) < 0.05)


def test_sustained_error_saturates_without_windup(plant, cfg):
    # Feed a frozen, far-off measurement; outputs must pin to the rails and
    # the integrators must stop accumulating once they do.
    s, _ = nominal_operating_point(plant)
    frozen = perturbed_start(plant, bus_factor=1.6)
    ctl = LegacyControllers.from_nominal(cfg, plant)
    for _ in range(100):
        d = ctl.step(frozen, TS)
        assert 0.0 <= d.d_bes <= 1.0 and 0.0 <= d.d_ev <= 1.0
    integ_snapshot = ctl.pi_bes.integ
    ctl.step(frozen, TS)
    assert ctl.pi_bes.integ == integ_snapshot


# -------------------------------------------------------------------- clone


def attacked_state(plant, cfg, offsets, steps=3):
    """Drive the plant a few control periods with corrupted duties."""
    s, _ = nominal_operating_point(plant)
    ctl = LegacyControllers.from_nominal(cfg, plant)
    for _ in range(steps):
        d = ctl.step(s, TS)
        corrupted = DutySet(d.d_pv + offsets[0], d.d_bes + offsets[1],
                            d.d_ev + offsets[2]).clamped()
        s = step(plant, s, corrupted)
    return s


@pytest.mark.parametrize("offsets", [
    (0.5, -0.5, -0.5),   # every channel biased at once
    (0.5, 0.0, 0.0),
    (0.0, -0.5, 0.0),
    (0.0, 0.0, -0.5),
])
def test_clone_recovers_to_bands(plant, cfg, offsets):
    s = attacked_state(plant, cfg, offsets)
    clone = clone_controllers(cfg, plant)
    in_band_at = None
    for k in range(20):
        d = clone.step(s, TS)
        s = step(plant, s, d)
        ok = (0.200 < d.d_pv < 0.201 and 0.700 < d.d_bes < 0.710
              and 0.540 < d.d_ev < 0.550)
        if ok and in_band_at is None:
            in_band_at = (k + 1) * TS
    assert in_band_at is not None and in_band_at <= 1.0
    assert abs(s.v_bus - cfg.refs.v_bus) < 0.05


def test_clone_shares_gains_but_not_state(plant, cfg):
    ctl = LegacyControllers.from_nominal(cfg, plant)
    s = perturbed_start(plant, bus_factor=1.2)
    for _ in range(5):
        ctl.step(s, TS)
    clone = clone_controllers(cfg, plant)
    assert clone.pi_bes.kp == ctl.pi_bes.kp
    assert clone.pi_bes.integ != ctl.pi_bes.integ


# ---------------------------------------------------------------- reseeding


def test_reseed_bes_restores_continuity(plant, cfg):
    ctl = LegacyControllers.from_nominal(cfg, plant)
    s, _ = nominal_operating_point(plant)
    ctl.reseed_bes(0.68, cfg.refs.v_bus - s.v_bus)
    duty = ctl.step_bes(s, TS)
    assert duty == pytest.approx(0.68, abs=1e-6)


def test_reseed_pv_moves_tracker(plant, cfg):
    ctl = LegacyControllers.from_nominal(cfg, plant)
    s, _ = nominal_operating_point(plant)
    ctl.reseed_pv(0.2003)
    duty = ctl.step_pv(s)
    assert abs(duty - 0.2003) <= cfg.mppt_step_size + 1e-12
