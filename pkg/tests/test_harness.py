"""Configuration and orchestration tests.

Groups:
  * config — defaults, round trip, hashing, validation
  * builders — section-to-dataclass construction
  * time series CSV — schema, metadata, determinism, parse round trip
  * stats table — phase semantics, companion attack rows, empty phases
  * compare — per-strategy rows, shared companion
  * plots — file set, determinism, shading, degenerate input
"""

import json
import re

import numpy as np
import pytest

from evcsim.attack import AttackKind
from evcsim.config import ScenarioConfig
from evcsim.detect import PredicateMode
from evcsim.mitigate import RunLog, Strategy
from evcsim.plots import CHART_GROUPS, emit_plots
from evcsim.runner import (
    TIME_SERIES_COLUMNS,
    RunnerError,
    compare_strategies,
    parse_time_series_csv,
    render_stats_csv,
    render_time_series_csv,
    run_scenario,
    stat_rows,
    stats_from_csv,
)
from evcsim.stats import EmptyPhase, quartiles, window_mask


@pytest.fixture(scope="module")
def bf_cfg():
    return ScenarioConfig.model_validate(
        {
            "seed": 3,
            "strategy": {"pv": "brute_force", "bes": "brute_force", "ev": "brute_force"},
        }
    )


@pytest.fixture(scope="module")
def bf_prod(bf_cfg):
    return run_scenario(bf_cfg)


@pytest.fixture(scope="module")
def quiet_prod():
    cfg = ScenarioConfig.model_validate(
        {"attack": {"windows": {}}, "duration": 5.0}
    )
    return run_scenario(cfg)


# --------------------------------------------------------------------- config


def test_minimal_document_is_complete():
    cfg = ScenarioConfig.model_validate({"seed": 5})
    assert cfg.duration == 17.0
    assert cfg.attack.build(cfg.seed).windows == {
        "pv": (5.0, 7.0), "bes": (9.0, 11.0), "ev": (13.0, 15.0)
    }
    assert cfg.strategy.build().pv is Strategy.LEGACY_ONLY


def test_round_trip_is_lossless():
    cfg = ScenarioConfig.model_validate(
        {
            "seed": 9,
            "attack": {"kind": "const_bias", "timing": "simultaneous", "constant_c": 0.4},
            "detector": {"mode": "disjunctive", "hold_steps": 3},
            "strategy": {"bes": "clone", "table": {"pv": 0.21}},
            "agent": {"ev": {"gamma": 0.95}},
        }
    )
    again = ScenarioConfig.from_json_text(cfg.to_json_text())
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()


def test_hash_ignores_out_dir_only():
    a = ScenarioConfig.model_validate({"seed": 1, "out_dir": "x"})
    b = ScenarioConfig.model_validate({"seed": 1, "out_dir": "y"})
    c = ScenarioConfig.model_validate({"seed": 2, "out_dir": "x"})
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()


def test_explicit_empty_windows_mean_no_attack():
    cfg = ScenarioConfig.model_validate({"attack": {"windows": {}}})
    assert cfg.attack.build(0).windows == {}


def test_window_past_duration_rejected():
    with pytest.raises(ValueError, match="ends at"):
        ScenarioConfig.model_validate({"duration": 10.0})


def test_window_on_unknown_channel_rejected():
    with pytest.raises(ValueError, match="unknown channel"):
        ScenarioConfig.model_validate(
            {"attack": {"windows": {"grid": [1.0, 2.0]}}}
        )


def test_inverted_window_rejected():
    with pytest.raises(ValueError, match="start < end"):
        ScenarioConfig.model_validate(
            {"attack": {"windows": {"pv": [7.0, 5.0]}}}
        )


def test_unknown_section_field_rejected():
    with pytest.raises(ValueError):
        ScenarioConfig.model_validate({"detector": {"holdsteps": 4}})


def test_attack_seed_defaults_to_scenario_seed():
    cfg = ScenarioConfig.model_validate({"seed": 11})
    assert cfg.attack.build(cfg.seed).seed == 11
    cfg2 = ScenarioConfig.model_validate({"seed": 11, "attack": {"seed": 4}})
    assert cfg2.attack.build(cfg2.seed).seed == 4


# ------------------------------------------------------------------- builders


def test_plant_overrides_apply_after_calibration():
    cfg = ScenarioConfig.model_validate({"plant": {"params": {"r_load": 30.0}}})
    assert cfg.plant.build().r_load == 30.0


def test_uncalibrated_plant_uses_defaults():
    cfg = ScenarioConfig.model_validate({"plant": {"calibrate": False}})
    assert cfg.plant.build() is not None


def test_reference_and_gain_overrides():
    cfg = ScenarioConfig.model_validate(
        {"references": {"v_bus": 53.0}, "control": {"kp_ev": 0.2}}
    )
    params = cfg.plant.build()
    refs = cfg.references.build(params)
    assert refs.v_bus == 53.0
    assert refs.p_pv == pytest.approx(1043.5996)
    assert cfg.control.build(refs).kp_ev == 0.2


def test_detector_section_builds_modes():
    cfg = ScenarioConfig.model_validate({"detector": {"mode": "disjunctive"}})
    assert cfg.detector.build().mode is PredicateMode.DISJUNCTIVE


def test_strategy_table_override():
    cfg = ScenarioConfig.model_validate({"strategy": {"table": {"bes": 0.69}}})
    tab = cfg.strategy.build_table()
    assert tab.d_bes == 0.69
    assert tab.d_pv == 0.2


def test_agent_override_feeds_agent_config():
    cfg = ScenarioConfig.model_validate({"agent": {"bes": {"gamma": 0.9}}})
    ac = cfg.build_agent_config("bes", cfg.plant.build())
    assert ac.gamma == 0.9
    assert ac.channel == "bes"


def test_bad_agent_override_is_reported():
    cfg = ScenarioConfig.model_validate({"agent": {"bes": {"gammma": 0.9}}})
    with pytest.raises(ValueError, match="bes"):
        cfg.build_agent_config("bes", cfg.plant.build())


# ----------------------------------------------------------- time series CSV


def test_column_order_is_pinned(bf_cfg, bf_prod):
    text = render_time_series_csv(bf_cfg, bf_prod.spec, bf_prod.primary)
    lines = text.splitlines()
    meta = [ln for ln in lines if ln.startswith("# ")]
    header = lines[len(meta)]
    assert header == ",".join(TIME_SERIES_COLUMNS)
    assert len(lines) - len(meta) - 1 == len(bf_prod.primary)


def test_metadata_names_version_hash_and_seed(bf_cfg, bf_prod):
    text = render_time_series_csv(bf_cfg, bf_prod.spec, bf_prod.primary)
    meta = dict(
        ln[2:].split("=", 1) for ln in text.splitlines() if ln.startswith("# ")
    )
    assert meta["config"] == bf_cfg.config_hash()
    assert meta["seed"] == "3"
    assert meta["evcsim"]
    assert meta["attack_kind"] == AttackKind.HELD_RANDOM.value
    assert json.loads(meta["windows"])["pv"] == [5.0, 7.0]


def test_rerun_renders_identical_bytes(bf_cfg, bf_prod):
    prod2 = run_scenario(bf_cfg)
    a = render_time_series_csv(bf_cfg, bf_prod.spec, bf_prod.primary)
    b = render_time_series_csv(bf_cfg, prod2.spec, prod2.primary)
    assert a == b
    assert render_stats_csv(bf_cfg, bf_prod.spec, bf_prod.rows) == render_stats_csv(
        bf_cfg, prod2.spec, prod2.rows
    )


def test_parse_recovers_every_logged_column(bf_cfg, bf_prod):
    text = render_time_series_csv(bf_cfg, bf_prod.spec, bf_prod.primary)
    meta, log = parse_time_series_csv(text)
    src = bf_prod.primary
    assert len(log) == len(src)
    assert log.t == src.t
    for ch in ("pv", "bes", "ev"):
        assert log.routed[ch] == pytest.approx(src.routed[ch], abs=0.0)
        assert log.verdicts[ch] == [int(v) for v in src.verdicts[ch]]
    assert log.v_bus == src.v_bus
    assert log.windows == src.windows


def test_parse_rejects_foreign_text():
    with pytest.raises(RunnerError):
        parse_time_series_csv("t,voltage\n0.0,1.0\n")


def test_parse_rejects_ragged_row(bf_cfg, bf_prod):
    text = render_time_series_csv(bf_cfg, bf_prod.spec, bf_prod.primary)
    lines = text.splitlines()
    lines[-1] = lines[-1].rsplit(",", 1)[0]
    with pytest.raises(RunnerError):
        parse_time_series_csv("\n".join(lines))


# ----------------------------------------------------------------- stats table


def test_rows_cover_phases(bf_prod):
    have = {(r.signal, r.phase) for r in bf_prod.rows}
    for sig in ("p_pv", "v_bus", "i_bes", "v_bes", "i_ev", "v_ev"):
        for phase in ("normal", "attack", "mitigation"):
            assert (sig, phase) in have
    assert not bf_prod.notes


def test_attack_rows_come_from_companion(bf_prod):
    t = np.asarray(bf_prod.companion.t)
    mask = window_mask(t, bf_prod.spec.windows)
    series = np.asarray(bf_prod.companion.signal("v_bus"))[mask]
    q1, med, q3 = quartiles(series)
    row = next(
        r for r in bf_prod.rows if r.signal == "v_bus" and r.phase == "attack"
    )
    assert row.stats.median == med
    assert row.count == int(mask.sum())
    # the mitigated primary tells a different story during the attack
    routed = np.asarray(bf_prod.primary.signal("v_bus"))[mask]
    assert abs(np.median(routed) - med) > 1e-6


def test_mitigation_rows_use_primary_reined_in(bf_prod):
    row = next(
        r for r in bf_prod.rows if r.signal == "v_bus" and r.phase == "mitigation"
    )
    attack_row = next(
        r for r in bf_prod.rows if r.signal == "v_bus" and r.phase == "attack"
    )
    nominal = 52.7605
    assert abs(row.stats.median - nominal) < abs(attack_row.stats.median - nominal) + 1e-9


def test_quiet_run_reports_empty_phases(quiet_prod):
    phases = {r.phase for r in quiet_prod.rows}
    assert phases == {"normal"}
    assert any("attack" in n for n in quiet_prod.notes)
    assert any("mitigation" in n for n in quiet_prod.notes)


def test_legacy_run_reuses_primary_as_companion():
    cfg = ScenarioConfig.model_validate({"seed": 3})
    prod = run_scenario(cfg)
    assert prod.companion is prod.primary
    assert any("mitigation" in n for n in prod.notes)


def test_normal_phase_power_sits_at_target(bf_prod):
    row = next(
        r for r in bf_prod.rows if r.signal == "p_pv" and r.phase == "normal"
    )
    assert row.stats.median == pytest.approx(1043.5996, rel=0.01)


# -------------------------------------------------------------------- compare


def test_compare_tags_rows_and_shares_companion(bf_cfg):
    rows, logs, _ = compare_strategies(bf_cfg, ["legacy", "brute_force"])
    assert set(logs) == {"legacy", "brute_force"}
    by_strategy = {
        s: {(r.signal, r.phase): r.stats for r in rows if r.strategy == s}
        for s in ("legacy", "brute_force")
    }
    key = ("v_bus", "attack")
    assert by_strategy["legacy"][key] == by_strategy["brute_force"][key]
    key = ("v_bus", "mitigation")
    assert key not in by_strategy["legacy"]
    assert key in by_strategy["brute_force"]


def test_compare_rejects_unknown_strategy(bf_cfg):
    with pytest.raises(RunnerError, match="unknown strategy"):
        compare_strategies(bf_cfg, ["telepathy"])


def test_compare_rejects_empty_request(bf_cfg):
    with pytest.raises(RunnerError, match="no strategies"):
        compare_strategies(bf_cfg, [])


# ------------------------------------------------------------ stats from file


def test_stats_from_csv_matches_direct_computation(bf_cfg, bf_prod):
    text = render_time_series_csv(bf_cfg, bf_prod.spec, bf_prod.primary)
    meta, rows, _ = stats_from_csv(text)
    direct, _ = stat_rows(bf_prod.primary, bf_prod.primary, bf_prod.spec.windows)
    assert [(r.signal, r.phase) for r in rows] == [
        (r.signal, r.phase) for r in direct
    ]
    for got, want in zip(rows, direct):
        assert got.stats.as_tuple() == pytest.approx(want.stats.as_tuple())


def test_stats_from_headerless_text_fails():
    with pytest.raises(RunnerError):
        stats_from_csv("nope")


# ---------------------------------------------------------------------- plots


def test_emits_every_chart_group(bf_prod):
    svgs = emit_plots(bf_prod.primary)
    assert sorted(svgs) == sorted(CHART_GROUPS)
    for text in svgs.values():
        assert text.startswith("<svg ")
        assert text.rstrip().endswith("</svg>")
        assert "<polyline" in text


def test_plots_are_deterministic(bf_prod):
    assert emit_plots(bf_prod.primary) == emit_plots(bf_prod.primary)


def test_attack_windows_are_shaded(bf_prod):
    svg = emit_plots(bf_prod.primary)["bus_voltage.svg"]
    shaded = [ln for ln in svg.splitlines() if "fill-opacity" in ln]
    assert len(shaded) == len(bf_prod.spec.windows)


def test_time_axis_is_monotone(bf_prod):
    svg = emit_plots(bf_prod.primary)["power.svg"]
    pts = re.search(r'points="([^"]+)"', svg).group(1).split()
    xs = [float(p.split(",")[0]) for p in pts]
    assert all(b >= a for a, b in zip(xs, xs[1:]))


def test_empty_log_yields_no_files():
    with pytest.raises(EmptyPhase):
        emit_plots(RunLog(ts=0.1, windows={}))


def test_constant_series_still_renders():
    log = RunLog(ts=0.1, windows={})
    log.t = [0.0, 0.1, 0.2]
    for name in ("p_pv", "v_bus", "i_bes", "v_bes", "i_ev", "v_ev"):
        log.signal(name).extend([1.0, 1.0, 1.0])
    for ch in ("pv", "bes", "ev"):
        log.routed[ch].extend([0.5, 0.5, 0.5])
    svgs = emit_plots(log)
    assert "<polyline" in svgs["power.svg"]
