"""FastAPI application around the simulator core.

Every failure surfaces as ``{"detail": {"error": <code>, "message": <one
line>}}`` with a 4xx status, which is what lets the CLI print exactly one
parsable line and exit nonzero.
"""

from __future__ import annotations

import base64
import dataclasses

from fastapi import FastAPI, HTTPException
from pydantic import ValidationError

from .. import __version__
from ..config import ScenarioConfig
from ..mitigate import MissingAgent
from ..plant import CHANNELS, CalibrationTargets, calibrate_params
from ..plots import emit_plots
from ..runner import (
    RunnerError,
    compare_strategies,
    render_reward_csv,
    render_stats_csv,
    render_stats_csv_from_meta,
    render_time_series_csv,
    run_scenario,
    stats_from_csv,
)
from ..stats import EmptyPhase
from ..td3 import curriculum, train_agent
from .models import (
    AgentArtifact,
    CalibrateRequest,
    CalibrateResponse,
    CompareRequest,
    CompareResponse,
    RunRequest,
    RunResponse,
    StatsRequest,
    StatsResponse,
    TrainRequest,
    TrainResponse,
)


def _fail(code: str, message: str, status: int = 422) -> HTTPException:
    return HTTPException(
        status_code=status,
        detail={"error": code, "message": " ".join(str(message).split())},
    )


def _parse_config(doc: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(doc)
    except ValidationError as e:
        first = e.errors()[0]
        loc = ".".join(str(p) for p in first["loc"]) or "config"
        raise _fail("invalid-config", f"{loc}: {first['msg']}") from None


def create_app() -> FastAPI:
    app = FastAPI(title="evcsim", version=__version__)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/calibrate", response_model=CalibrateResponse)
    def calibrate(req: CalibrateRequest) -> CalibrateResponse:
        try:
            targets = CalibrationTargets(**req.targets)
        except TypeError as e:
            raise _fail("invalid-targets", str(e)) from None
        params = calibrate_params(targets)
        return CalibrateResponse(
            params=dataclasses.asdict(params),
            targets=dataclasses.asdict(targets),
        )

    @app.post("/run", response_model=RunResponse)
    def run(req: RunRequest) -> RunResponse:
        cfg = _parse_config(req.config)
        try:
            prod = run_scenario(cfg)
        except MissingAgent as e:
            raise _fail("missing-agent", str(e)) from None
        except RunnerError as e:
            raise _fail("run-failed", str(e)) from None
        notes = list(prod.notes)
        try:
            svgs = emit_plots(prod.primary)
        except EmptyPhase as e:
            svgs = {}
            notes.append(str(e))
        return RunResponse(
            config_hash=cfg.config_hash(),
            time_series_csv=render_time_series_csv(cfg, prod.spec, prod.primary),
            stats_csv=render_stats_csv(cfg, prod.spec, prod.rows),
            svgs=svgs,
            notes=notes,
        )

    @app.post("/train", response_model=TrainResponse)
    def train(req: TrainRequest) -> TrainResponse:
        cfg = _parse_config(req.config)
        if req.agent not in (*CHANNELS, "all"):
            raise _fail("invalid-agent", f"agent must be pv, bes, ev or all, got {req.agent!r}")
        params = cfg.plant.build()
        refs = cfg.references.build(params)
        control_cfg = cfg.control.build(refs)
        agent_cfgs = {ch: cfg.build_agent_config(ch, params) for ch in CHANNELS}
        if req.agent == "all":
            results = curriculum(
                params, seed=cfg.seed, cfgs=agent_cfgs, control_cfg=control_cfg
            )
        else:
            results = {
                req.agent: train_agent(
                    req.agent,
                    params,
                    agent_cfgs[req.agent],
                    seed=cfg.seed,
                    control_cfg=control_cfg,
                )
            }
        agents = {}
        for ch, res in results.items():
            agents[ch] = AgentArtifact(
                bundle_b64=base64.b64encode(res.bundle.to_bytes()).decode(),
                reward_csv=render_reward_csv(cfg, ch, res),
                episodes=len(res.train_returns),
                best_return=max(res.returns) if res.returns else float("-inf"),
                stalled=res.stalled,
                seed=res.seed,
            )
        return TrainResponse(config_hash=cfg.config_hash(), agents=agents)

    @app.post("/compare", response_model=CompareResponse)
    def compare(req: CompareRequest) -> CompareResponse:
        cfg = _parse_config(req.config)
        try:
            rows, logs, notes = compare_strategies(cfg, req.strategies)
        except MissingAgent as e:
            raise _fail("missing-agent", str(e)) from None
        except RunnerError as e:
            raise _fail("run-failed", str(e)) from None
        spec = cfg.attack.build(cfg.seed)
        series = {
            name: render_time_series_csv(
                cfg, spec, log, strategies=f"pv:{name},bes:{name},ev:{name}"
            )
            for name, log in logs.items()
        }
        return CompareResponse(
            config_hash=cfg.config_hash(),
            stats_csv=render_stats_csv(cfg, spec, rows, strategies="compare"),
            time_series=series,
            notes=notes,
        )

    @app.post("/stats", response_model=StatsResponse)
    def stats(req: StatsRequest) -> StatsResponse:
        try:
            meta, rows, notes = stats_from_csv(req.csv_text)
        except RunnerError as e:
            raise _fail("invalid-input", str(e)) from None
        except EmptyPhase as e:
            raise _fail("empty-phase", str(e)) from None
        return StatsResponse(
            stats_csv=render_stats_csv_from_meta(meta, rows), notes=notes
        )

    return app
