"""Request and response bodies for the search service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field

from .. import SCHEMA_VERSION
from ..schemas import (
    Algorithm,
    ArchitectureDescription,
    CostProfile,
    DistillConfig,
    GridResult,
    Hyperparams,
    MetricRecord,
    RunConfig,
    SearchSpaceConfig,
    SelectedArchitecture,
    TaskConfig,
)


class HealthResponse(BaseModel):
    status: str
    version: str
    schema_version: int = SCHEMA_VERSION


class ProfileRequest(BaseModel):
    space: SearchSpaceConfig = Field(default_factory=SearchSpaceConfig)
    lengths: list[int] = Field(default_factory=lambda: [32, 128, 512])
    reps: int = 7
    seed: int = 0
    machine: str = ""


class ProfileResponse(BaseModel):
    profile: CostProfile
    csv: str


class SearchRequest(BaseModel):
    run: RunConfig = Field(default_factory=RunConfig)


class SearchResponse(BaseModel):
    algorithm: Algorithm
    metrics: list[MetricRecord]
    selected: SelectedArchitecture
    description: ArchitectureDescription
    dot: str
    dev_metric: float
    cost: float
    speedup: float
    speedup_infinite: bool
    valid: bool
    checkpoint: dict
    config_hash: str


class GridRequest(BaseModel):
    run: RunConfig = Field(default_factory=RunConfig)
    cost_weight_grid: Optional[list[float]] = None
    policy_lr_grid: Optional[list[float]] = None
    quality_floor: Optional[float] = None


class GridResponse(BaseModel):
    result: GridResult
    csv: str
    config_hash: str


class RetrainRequest(BaseModel):
    selected: SelectedArchitecture
    task: TaskConfig = Field(default_factory=TaskConfig)
    hyperparams: Hyperparams = Field(default_factory=Hyperparams)


class RetrainResponse(BaseModel):
    metrics: list[MetricRecord]
    dev_metric: float
    checkpoint: dict
    config_hash: str


class DistillRequest(BaseModel):
    teacher_checkpoint: dict
    teacher_gates: dict[str, float]
    task: TaskConfig = Field(default_factory=TaskConfig)
    distill: DistillConfig = Field(default_factory=DistillConfig)
    hyperparams: Hyperparams = Field(default_factory=Hyperparams)
    student_space: Optional[SearchSpaceConfig] = None
    student_gates: Optional[dict[str, float]] = None
    algorithm: Optional[Algorithm] = None  # search during distillation
    profile: Optional[CostProfile] = None


class DistillStep(BaseModel):
    step: int
    ramp: float
    silver_loss: float
    gold_loss: Optional[float] = None
    loss: float
    metric: Optional[float] = None


class DistillResponse(BaseModel):
    history: list[DistillStep]
    dev_metric: float
    checkpoint: dict
    config_hash: str
    selected: Optional[dict[str, float]] = None
    cost: Optional[float] = None


class ExportRequest(BaseModel):
    selected: SelectedArchitecture
    profile: Optional[CostProfile] = None


class ExportResponse(BaseModel):
    description: ArchitectureDescription
    dot: str


class VerifyCheck(BaseModel):
    name: str
    passed: bool
    detail: str


class VerifyResponse(BaseModel):
    passed: bool
    checks: list[VerifyCheck]
