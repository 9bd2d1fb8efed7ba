"""Request/response models for the HTTP service.

Config payloads use the same flat dotted keys as the config file
(``run.seed``, ``urllc.eps``, ...), so a request body and a config file are
interchangeable descriptions of a run.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class ScenarioRequest(BaseModel):
    network: str = "cf"
    scenario_index: int = 0
    config: dict = Field(default_factory=dict)


class ScenarioResponse(BaseModel):
    network: str
    seed: int
    n_aps: int
    n_users: int
    ap_positions: list
    gu_positions: list
    uav_positions: list
    serving: list
    user_kinds: list


class RateRequest(BaseModel):
    sinr: list
    bandwidth_hz: float = 20e6
    block_len: int = 200
    pilot_len: int = 32
    duration_s: float = 5e-5
    error_prob: float = 1e-5


class RateResponse(BaseModel):
    rate_bps: list
    shannon_scale: float
    dispersion_coeff: float


class SolveRequest(BaseModel):
    tuple: str
    scenario_index: int = 0
    config: dict = Field(default_factory=dict)


class SolveResponse(BaseModel):
    tuple: str
    scheme: str
    objective: str
    direction: str
    alpha: list
    converged: bool
    iterations: int
    objective_trace: list
    per_user_rates: list
    diagnostics: dict


class ExperimentRequest(BaseModel):
    config: dict = Field(default_factory=dict)


class ExperimentStatus(BaseModel):
    id: str
    state: str
    detail: str = ""
    files: list = Field(default_factory=list)


class ExperimentFiles(BaseModel):
    id: str
    files: list
