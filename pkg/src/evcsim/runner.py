"""Scenario orchestration: runs, companion runs, CSV rendering, stats rows.

This module turns a validated :class:`~evcsim.config.ScenarioConfig` into
concrete artifacts (time-series CSV, stats CSV) without touching the
filesystem — callers decide where bytes go. All rendering is deterministic:
the same config and seed produce byte-identical text.

Phase semantics for the stats table:

* ``normal``     — samples before the first attack window, from the primary
                   run (which is unmitigated there anyway).
* ``attack``     — samples inside the union of attack windows, taken from an
                   *unmitigated companion run* of the same scenario, so the
                   row shows what the attack does when nobody intervenes.
* ``mitigation`` — attack-phase samples of the primary run where the router
                   actually replaced the corrupted duty.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .attack import AttackSpec
from .config import ScenarioConfig
from .mitigate import (
    BruteForceTable,
    DivergedRun,
    RunLog,
    Strategy,
    StrategyMap,
    run_mitigated,
)
from .stats import EmptyPhase, PhaseStats, compute_stats, normal_mask, window_mask
from .td3 import AgentBundle, TrainResult

SIGNALS = ("p_pv", "v_bus", "i_bes", "v_bes", "i_ev", "v_ev")
PHASES = ("normal", "attack", "mitigation")

TIME_SERIES_COLUMNS = (
    "t",
    "d_pv_legacy", "d_pv_attacked", "d_pv_routed", "verdict_pv",
    "d_bes_legacy", "d_bes_attacked", "d_bes_routed", "verdict_bes",
    "d_ev_legacy", "d_ev_attacked", "d_ev_routed", "verdict_ev",
    "p_pv", "v_bus", "i_bes", "v_bes", "i_ev", "v_ev",
)


class RunnerError(Exception):
    """A scenario could not be completed; message is one line."""


def _fmt(x: float) -> str:
    return repr(float(x))


# ----------------------------------------------------------------- running


@dataclass
class RunProduct:
    """Everything a single scenario run yields, still in memory."""

    cfg: ScenarioConfig
    spec: AttackSpec
    primary: RunLog
    companion: RunLog
    rows: list["StatRow"]
    notes: list[str] = field(default_factory=list)


def load_bundles(cfg: ScenarioConfig) -> dict[str, AgentBundle]:
    """Read the agent bundle files named in the config, if any."""
    out: dict[str, AgentBundle] = {}
    for ch, path in sorted(cfg.strategy.agents.items()):
        try:
            out[ch] = AgentBundle.load(path)
        except OSError as e:
            raise RunnerError(f"cannot read agent bundle for {ch}: {e}") from None
    return out


def _execute(
    cfg: ScenarioConfig,
    strategies: StrategyMap,
    bundles: dict[str, AgentBundle] | None,
) -> RunLog:
    params = cfg.plant.build()
    refs = cfg.references.build(params)
    try:
        return run_mitigated(
            params,
            cfg.attack.build(cfg.seed),
            strategies=strategies,
            bundles=bundles,
            detector_cfg=cfg.detector.build(),
            control_cfg=cfg.control.build(refs),
            table=cfg.strategy.build_table(),
            duration=cfg.duration,
        )
    except DivergedRun as e:
        t = e.log.t[-1] if len(e.log) else 0.0
        raise RunnerError(
            f"numerical divergence at t={t:.1f}s (step {e.step_index})"
        ) from None


def run_scenario(
    cfg: ScenarioConfig, bundles: dict[str, AgentBundle] | None = None
) -> RunProduct:
    """Primary run plus unmitigated companion, with the stats table built."""
    if bundles is None:
        bundles = load_bundles(cfg)
    strategies = cfg.strategy.build()
    primary = _execute(cfg, strategies, bundles)
    if strategies == StrategyMap.uniform(Strategy.LEGACY_ONLY):
        companion = primary
    else:
        companion = _execute(cfg, StrategyMap.uniform(Strategy.LEGACY_ONLY), None)
    spec = cfg.attack.build(cfg.seed)
    rows, notes = stat_rows(primary, companion, spec.windows)
    return RunProduct(cfg, spec, primary, companion, rows, notes)


# ------------------------------------------------------------- stats table


@dataclass(frozen=True)
class StatRow:
    signal: str
    phase: str
    count: int
    stats: PhaseStats
    strategy: str | None = None


def phase_masks(
    t: np.ndarray, windows: dict[str, tuple[float, float]], mitigated: np.ndarray
) -> dict[str, np.ndarray]:
    attacked = window_mask(t, windows)
    return {
        "normal": normal_mask(t, windows),
        "attack": attacked,
        "mitigation": attacked & mitigated,
    }


def stat_rows(
    primary: RunLog,
    companion: RunLog,
    windows: dict[str, tuple[float, float]],
    strategy: str | None = None,
) -> tuple[list[StatRow], list[str]]:
    """One row per signal and non-empty phase; notes name the empty ones."""
    t = np.asarray(primary.t)
    masks = phase_masks(t, windows, np.asarray(primary.mitigated_mask()))
    rows: list[StatRow] = []
    notes: list[str] = []
    for sig in SIGNALS:
        for phase in PHASES:
            src = companion if phase == "attack" else primary
            series = np.asarray(src.signal(sig))
            mask = masks[phase]
            try:
                st = compute_stats(series, {phase: mask}).get(phase)
            except EmptyPhase:
                notes.append(f"{sig}/{phase}: empty phase, row skipped")
                continue
            rows.append(StatRow(sig, phase, int(mask.sum()), st, strategy))
    return rows, notes


# ------------------------------------------------------------- CSV output


def _metadata_lines(
    cfg: ScenarioConfig, spec: AttackSpec, strategies: str | None = None
) -> list[str]:
    smap = cfg.strategy
    if strategies is None:
        strategies = f"pv:{smap.pv},bes:{smap.bes},ev:{smap.ev}"
    return [
        f"# evcsim={__version__}",
        f"# config={cfg.config_hash()}",
        f"# seed={cfg.seed}",
        f"# attack_kind={spec.kind.value}",
        "# windows=" + json.dumps(
            {k: list(v) for k, v in sorted(spec.windows.items())},
            separators=(",", ":"),
        ),
        f"# strategies={strategies}",
    ]


def render_time_series_csv(
    cfg: ScenarioConfig,
    spec: AttackSpec,
    log: RunLog,
    strategies: str | None = None,
) -> str:
    lines = _metadata_lines(cfg, spec, strategies)
    lines.append(",".join(TIME_SERIES_COLUMNS))
    for k in range(len(log)):
        cells = [_fmt(log.t[k])]
        for ch in ("pv", "bes", "ev"):
            cells += [
                _fmt(log.legacy[ch][k]),
                _fmt(log.attacked[ch][k]),
                _fmt(log.routed[ch][k]),
                str(int(log.verdicts[ch][k])),
            ]
        cells += [_fmt(log.signal(sig)[k]) for sig in SIGNALS]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _stats_body(rows: list[StatRow]) -> list[str]:
    with_strategy = any(r.strategy is not None for r in rows)
    header = ["signal", "phase"]
    if with_strategy:
        header.insert(0, "strategy")
    header += ["count", "min", "q1", "median", "q3", "max", "range", "iqr"]
    lines = [",".join(header)]
    for r in rows:
        cells = [r.signal, r.phase]
        if with_strategy:
            cells.insert(0, r.strategy or "")
        s = r.stats
        cells += [
            str(r.count),
            _fmt(s.minimum), _fmt(s.q1), _fmt(s.median), _fmt(s.q3),
            _fmt(s.maximum), _fmt(s.maximum - s.minimum), _fmt(s.q3 - s.q1),
        ]
        lines.append(",".join(cells))
    return lines


def render_stats_csv(
    cfg: ScenarioConfig,
    spec: AttackSpec,
    rows: list[StatRow],
    strategies: str | None = None,
) -> str:
    lines = _metadata_lines(cfg, spec, strategies) + _stats_body(rows)
    return "\n".join(lines) + "\n"


def render_reward_csv(cfg: ScenarioConfig, channel: str, result: TrainResult) -> str:
    """Convergence trace: row 0 is the untrained-policy benchmark (it has no
    training episode behind it, so that cell stays blank)."""
    lines = [
        f"# evcsim={__version__}",
        f"# config={cfg.config_hash()}",
        f"# seed={result.seed}",
        f"# agent={channel}",
        "episode,eval_return,train_return",
        f"0,{_fmt(result.returns[0])},",
    ]
    for i, tr in enumerate(result.train_returns, start=1):
        lines.append(f"{i},{_fmt(result.returns[i])},{_fmt(tr)}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------- comparison


def compare_strategies(
    cfg: ScenarioConfig,
    strategy_names: list[str],
    bundles: dict[str, AgentBundle] | None = None,
) -> tuple[list[StatRow], dict[str, RunLog], list[str]]:
    """Re-run the scenario once per strategy, all channels on that strategy.

    Returns the combined stats rows (strategy column filled), the primary
    log per strategy, and accumulated notes. The unmitigated companion run
    is shared: the attack row is the same story for everyone.
    """
    try:
        wanted = [Strategy(name) for name in strategy_names]
    except ValueError as e:
        raise RunnerError(f"unknown strategy: {e}") from None
    if not wanted:
        raise RunnerError("no strategies requested")
    if bundles is None:
        bundles = load_bundles(cfg)
    spec = cfg.attack.build(cfg.seed)
    companion = _execute(cfg, StrategyMap.uniform(Strategy.LEGACY_ONLY), None)
    rows: list[StatRow] = []
    logs: dict[str, RunLog] = {}
    notes: list[str] = []
    for strat in wanted:
        if strat is Strategy.LEGACY_ONLY:
            log = companion
        else:
            log = _execute(cfg, StrategyMap.uniform(strat), bundles)
        logs[strat.value] = log
        srows, snotes = stat_rows(log, companion, spec.windows, strategy=strat.value)
        rows.extend(srows)
        notes.extend(f"{strat.value}: {n}" for n in snotes)
    return rows, logs, notes


# -------------------------------------------------------- stats from file


def parse_time_series_csv(text: str) -> tuple[dict[str, str], RunLog]:
    """Rebuild a :class:`RunLog` (and the metadata) from rendered CSV text.

    Only the logged columns come back — plant internals such as inductor
    currents are not part of the file and are zeroed.
    """
    meta: dict[str, str] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines) and lines[i].startswith("# "):
        key, _, val = lines[i][2:].partition("=")
        meta[key] = val
        i += 1
    if i >= len(lines) or lines[i].split(",") != list(TIME_SERIES_COLUMNS):
        raise RunnerError("input is not an evcsim time-series CSV")
    try:
        windows = {
            k: (float(v[0]), float(v[1]))
            for k, v in json.loads(meta.get("windows", "{}")).items()
        }
    except (json.JSONDecodeError, IndexError, TypeError):
        raise RunnerError("time-series CSV has a malformed windows header") from None
    ts = 0.1
    log = RunLog(ts=ts, windows=windows)
    for ln in lines[i + 1:]:
        if not ln:
            continue
        c = ln.split(",")
        if len(c) != len(TIME_SERIES_COLUMNS):
            raise RunnerError("time-series CSV has a malformed data row")
        try:
            log.t.append(float(c[0]))
            for j, ch in enumerate(("pv", "bes", "ev")):
                log.legacy[ch].append(float(c[1 + 4 * j]))
                log.attacked[ch].append(float(c[2 + 4 * j]))
                log.routed[ch].append(float(c[3 + 4 * j]))
                log.verdicts[ch].append(int(c[4 + 4 * j]))
            for off, sig in enumerate(SIGNALS):
                log.signal(sig).append(float(c[13 + off]))
        except ValueError:
            raise RunnerError("time-series CSV has a non-numeric cell") from None
    if len(log) >= 2:
        log.ts = log.t[1] - log.t[0]
    return meta, log


def stats_from_csv(text: str) -> tuple[dict[str, str], list[StatRow], list[str]]:
    """Phase stats recomputed from a previously written time-series CSV.

    There is no companion run here, so the attack row reflects the logged
    run itself (mitigated or not, whatever the file recorded).
    """
    meta, log = parse_time_series_csv(text)
    if len(log) == 0:
        raise EmptyPhase("time-series CSV has no data rows")
    rows, notes = stat_rows(log, log, log.windows)
    return meta, rows, notes


def render_stats_csv_from_meta(meta: dict[str, str], rows: list[StatRow]) -> str:
    """Stats CSV that inherits the metadata of the file it was computed from."""
    lines = [f"# {k}={v}" for k, v in meta.items()] + _stats_body(rows)
    return "\n".join(lines) + "\n"
