"""Scenario configuration: one JSON document describing a full run.

Sections mirror the domain objects they configure (plant, references,
control, attack, detector, strategy, agents) and every section carries
usable defaults, so a minimal file like ``{"seed": 3}`` is a complete
scenario. Files round-trip losslessly and hash deterministically, which is
what makes byte-identical re-runs checkable.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .attack import AttackKind, AttackSpec, AttackTiming, default_schedule
from .controllers import ControlConfig, References
from .detect import DetectorConfig, PredicateMode
from .mitigate import BruteForceTable, Strategy, StrategyMap
from .plant import CHANNELS, CalibrationTargets, PlantParams, calibrate_params
from .td3 import AgentConfig, default_agent_config

_Window = tuple[float, float]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PlantSection(_Section):
    """Either calibrate against target medians or take explicit parameters."""

    calibrate: bool = True
    targets: dict[str, float] = Field(default_factory=dict)
    params: dict[str, float] = Field(default_factory=dict)

    def build(self) -> PlantParams:
        if self.calibrate:
            base = calibrate_params(CalibrationTargets(**self.targets))
        else:
            base = PlantParams()
        if self.params:
            base = dataclasses.replace(base, **self.params)
        return base


class ReferencesSection(_Section):
    p_pv: float | None = None
    v_bus: float | None = None
    v_ev: float | None = None

    def build(self, params: PlantParams) -> References:
        base = References.from_plant(params)
        over = {k: v for k, v in self.model_dump().items() if v is not None}
        return dataclasses.replace(base, **over) if over else base


class ControlSection(_Section):
    mppt_step_size: float | None = None
    mppt_duty_init: float | None = None
    kp_bes: float | None = None
    ki_bes: float | None = None
    kp_ev: float | None = None
    ki_ev: float | None = None
    pi_slew: float | None = None

    def build(self, refs: References) -> ControlConfig:
        over = {k: v for k, v in self.model_dump().items() if v is not None}
        return ControlConfig(refs=refs, **over)


class AttackSection(_Section):
    kind: Literal["held_random", "const_bias"] = "held_random"
    timing: Literal["staggered", "simultaneous"] = "staggered"
    #: explicit channel windows; null means the stock schedule for ``timing``
    #: and an empty mapping means no attack at all
    windows: dict[str, _Window] | None = None
    prn_low: float = 0.0
    prn_high: float = 1.0
    prn_rep: int = 10
    constant_c: float = 0.5
    #: separate corruption seed; null reuses the scenario seed
    seed: int | None = None

    def effective_windows(self) -> dict[str, _Window]:
        if self.windows is not None:
            return dict(self.windows)
        return dict(
            default_schedule(
                AttackKind(self.kind), AttackTiming(self.timing), seed=0
            ).windows
        )

    def build(self, scenario_seed: int) -> AttackSpec:
        return AttackSpec(
            kind=AttackKind(self.kind),
            windows=self.effective_windows(),
            prn_low=self.prn_low,
            prn_high=self.prn_high,
            prn_rep=self.prn_rep,
            constant_c=self.constant_c,
            seed=self.seed if self.seed is not None else scenario_seed,
        )


class DetectorSection(_Section):
    power_window: _Window | None = None
    duty_windows: dict[str, _Window] | None = None
    mode: Literal["conjunctive", "disjunctive"] = "conjunctive"
    hold_steps: int = 5

    def build(self) -> DetectorConfig:
        kw: dict = {"mode": PredicateMode(self.mode), "hold_steps": self.hold_steps}
        if self.power_window is not None:
            kw["power_window"] = tuple(self.power_window)
        if self.duty_windows is not None:
            kw["duty_windows"] = {k: tuple(v) for k, v in self.duty_windows.items()}
        return DetectorConfig(**kw)


_STRATEGY_NAMES = Literal["legacy", "brute_force", "clone", "td3"]


class StrategySection(_Section):
    """Per-channel mitigation choice plus the brute-force duty table."""

    pv: _STRATEGY_NAMES = "legacy"
    bes: _STRATEGY_NAMES = "legacy"
    ev: _STRATEGY_NAMES = "legacy"
    table: dict[str, float] = Field(default_factory=dict)
    #: channel -> bundle file path, read by the CLI for td3 channels
    agents: dict[str, str] = Field(default_factory=dict)

    def build(self) -> StrategyMap:
        return StrategyMap(
            pv=Strategy(self.pv), bes=Strategy(self.bes), ev=Strategy(self.ev)
        )

    def build_table(self) -> BruteForceTable:
        mapped = {f"d_{ch}": v for ch, v in self.table.items()}
        return BruteForceTable(**mapped)


class ScenarioConfig(_Section):
    plant: PlantSection = Field(default_factory=PlantSection)
    references: ReferencesSection = Field(default_factory=ReferencesSection)
    control: ControlSection = Field(default_factory=ControlSection)
    attack: AttackSection = Field(default_factory=AttackSection)
    detector: DetectorSection = Field(default_factory=DetectorSection)
    strategy: StrategySection = Field(default_factory=StrategySection)
    #: per-channel keyword overrides applied to the stock agent configuration
    agent: dict[str, dict] = Field(default_factory=dict)
    seed: int = 0
    duration: float = 17.0
    out_dir: str = "out"

    @model_validator(mode="after")
    def _consistent(self) -> "ScenarioConfig":
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        for ch, (lo, hi) in self.attack.effective_windows().items():
            if ch not in CHANNELS:
                raise ValueError(f"attack window for unknown channel {ch!r}")
            if not 0.0 <= lo < hi:
                raise ValueError(f"attack window for {ch!r} must have 0 <= start < end")
            if hi > self.duration:
                raise ValueError(
                    f"attack window for {ch!r} ends at {hi} s, after the "
                    f"{self.duration} s run"
                )
        for ch in self.agent:
            if ch not in CHANNELS:
                raise ValueError(f"agent overrides for unknown channel {ch!r}")
        for ch in self.strategy.agents:
            if ch not in CHANNELS:
                raise ValueError(f"agent bundle for unknown channel {ch!r}")
        return self

    # ------------------------------------------------------------- builders

    def build_agent_config(self, channel: str, params: PlantParams) -> AgentConfig:
        over = dict(self.agent.get(channel, {}))
        try:
            return default_agent_config(channel, params, **over)
        except TypeError as e:
            raise ValueError(f"bad agent override for {channel!r}: {e}") from None

    # ---------------------------------------------------------- persistence

    def to_json_text(self) -> str:
        return self.model_dump_json(indent=2) + "\n"

    @classmethod
    def from_json_text(cls, text: str) -> "ScenarioConfig":
        return cls.model_validate_json(text)

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        return cls.from_json_text(Path(path).read_text())

    def config_hash(self) -> str:
        """Stable digest of everything that affects simulation output.

        The output directory is excluded: two runs of the same scenario into
        different folders are the same run.
        """
        doc = self.model_dump(mode="json")
        doc.pop("out_dir", None)
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]
