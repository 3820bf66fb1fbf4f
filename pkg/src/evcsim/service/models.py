"""Request and response bodies for the HTTP API.

Scenario configs travel as plain JSON objects and are validated inside the
endpoints, so malformed configs come back as one structured error instead
of a framework-shaped validation dump. Binary artifacts (agent bundles)
are base64 text; everything else is already text.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class CalibrateRequest(BaseModel):
    targets: dict[str, float] = Field(default_factory=dict)


class CalibrateResponse(BaseModel):
    params: dict[str, float]
    targets: dict[str, float]


class RunRequest(BaseModel):
    config: dict = Field(default_factory=dict)


class RunResponse(BaseModel):
    config_hash: str
    time_series_csv: str
    stats_csv: str
    svgs: dict[str, str]
    notes: list[str]


class TrainRequest(BaseModel):
    config: dict = Field(default_factory=dict)
    agent: str = "all"   # pv | bes | ev | all


class AgentArtifact(BaseModel):
    bundle_b64: str
    reward_csv: str
    episodes: int
    best_return: float
    stalled: bool
    seed: int


class TrainResponse(BaseModel):
    config_hash: str
    agents: dict[str, AgentArtifact]


class CompareRequest(BaseModel):
    config: dict = Field(default_factory=dict)
    strategies: list[str] = Field(
        default_factory=lambda: ["legacy", "brute_force", "clone", "td3"]
    )


class CompareResponse(BaseModel):
    config_hash: str
    stats_csv: str
    time_series: dict[str, str]
    notes: list[str]


class StatsRequest(BaseModel):
    csv_text: str


class StatsResponse(BaseModel):
    stats_csv: str
    notes: list[str]
