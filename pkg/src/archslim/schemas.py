"""Serialized data contracts: configs, profiles, descriptions, metrics.

Everything that crosses a process boundary (config files, service payloads,
emitted artifacts) is a pydantic model carrying a ``schema_version`` field.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

SCHEMA_VERSION = 1

TaskKind = Literal["sequence-classification", "masked-token-prediction", "sequence-tagging"]
Algorithm = Literal["do", "sdo"]


class SearchSpaceConfig(BaseModel):
    """Dimensions of the over-parameterized network and its split counts."""

    schema_version: int = SCHEMA_VERSION
    layers: int = Field(default=2, ge=1)
    hidden: int = Field(default=32, ge=1)
    heads: int = Field(default=2, ge=1)
    ff_dim: int = Field(default=128, ge=1)
    key_dim: int = Field(default=32, ge=1)
    value_dim: int = Field(default=32, ge=1)
    m_ff: int = Field(default=2, ge=1)
    m_sim: int = Field(default=2, ge=1)
    m_value: int = Field(default=2, ge=1)
    allow_vertical_attention: bool = True
    search_ln_mean: bool = True
    tie_value_slices: bool = True
    activation: Literal["gelu", "relu"] = "gelu"

    @model_validator(mode="after")
    def _check_divisibility(self):
        for dim, m, name in (
            (self.ff_dim, self.m_ff, "ff_dim/m_ff"),
            (self.key_dim, self.m_sim, "key_dim/m_sim"),
            (self.value_dim, self.m_value, "value_dim/m_value"),
        ):
            if dim % m != 0:
                raise ValueError(f"{name}: {dim} is not divisible into {m} equal slices")
        return self


class Hyperparams(BaseModel):
    """Search and training knobs shared by both algorithms.

    ``cost_weight`` multiplies the modeled cost in the total loss;
    ``policy_lr`` is the sampling-policy learning rate (ignored by direct
    optimization).  ``arch_dead_zone`` snaps relaxed gates whose magnitude
    falls below it to exactly zero after each update, which is what lets
    the prune threshold fire; it defaults to ``arch_learning_rate``.
    """

    schema_version: int = SCHEMA_VERSION
    cost_weight: float = Field(default=1e-5, ge=0.0)
    policy_lr: float = Field(default=0.01, ge=0.0)
    prune_threshold: float = Field(default=1e-6, gt=0.0)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    arch_learning_rate: float = Field(default=0.01, gt=0.0)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = Field(default=400, ge=1)
    batch_size: int = Field(default=8, ge=1)
    seed: int = 0
    policy_init: float = 0.0
    policy_warmup_frac: float = Field(default=0.2, ge=0.0, le=1.0)
    arch_dead_zone: Optional[float] = None
    eval_every: int = Field(default=50, ge=1)
    quality_floor: float = Field(default=0.01, ge=0.0)
    freeze_arch: bool = False

    @property
    def dead_zone(self) -> float:
        return self.arch_dead_zone if self.arch_dead_zone is not None else self.arch_learning_rate

    @property
    def policy_warmup_steps(self) -> int:
        return int(self.policy_warmup_frac * self.steps)


class TaskConfig(BaseModel):
    """A synthetic task: deterministic function of its generator seed."""

    schema_version: int = SCHEMA_VERSION
    kind: TaskKind = "sequence-classification"
    vocab_size: int = Field(default=12, ge=4)
    seq_len: int = Field(default=16, ge=2)
    num_classes: int = Field(default=2, ge=2)
    seed: int = 0
    train_size: int = Field(default=512, ge=1)
    dev_size: int = Field(default=256, ge=1)


class DistillConfig(BaseModel):
    """Teacher-to-student transfer settings.

    Gold-label weight ramps linearly from 0 at ``ramp_start_pct`` of
    training to 1 at ``ramp_end_pct``; before the ramp only teacher
    (silver) labels are used, after it only gold labels.  Students carry
    no dropout.
    """

    schema_version: int = SCHEMA_VERSION
    ramp_start_pct: float = 80.0
    ramp_end_pct: float = 100.0
    dropout_removed: bool = True

    @model_validator(mode="after")
    def _check_ramp(self):
        if not (0.0 <= self.ramp_start_pct < self.ramp_end_pct <= 100.0):
            raise ValueError("require 0 <= ramp_start_pct < ramp_end_pct <= 100")
        if not self.dropout_removed:
            raise ValueError("students are always trained without dropout")
        return self


class CostProfile(BaseModel):
    """Per-component wall-time measurements on one machine.

    ``measurements`` maps category -> sequence length -> median seconds for
    the whole network's share of that category.  ``aggregated`` holds the
    max over profiled lengths, which is the value the cost model consumes.
    """

    schema_version: int = SCHEMA_VERSION
    profile_id: str = ""
    machine: str = ""
    reps: int = 5
    batch_size: int = 1
    lengths: list[int] = Field(default_factory=list)
    measurements: dict[str, dict[int, float]] = Field(default_factory=dict)
    aggregated: dict[str, float] = Field(default_factory=dict)
    warnings: list[str] = Field(default_factory=list)

    @field_validator("measurements")
    @classmethod
    def _non_negative(cls, v):
        for cat, by_len in v.items():
            for length, t in by_len.items():
                if t < 0:
                    raise ValueError(f"negative time for {cat} at length {length}")
        return v


class Provenance(BaseModel):
    algorithm: Optional[Algorithm] = None
    cost_weight: Optional[float] = None
    policy_lr: Optional[float] = None
    seed: int = 0
    profile_id: str = ""
    config_hash: str = ""


class SelectedArchitecture(BaseModel):
    """A concrete gate assignment over a search space."""

    schema_version: int = SCHEMA_VERSION
    space: SearchSpaceConfig
    values: dict[str, float]
    provenance: Provenance = Field(default_factory=Provenance)


class HeadDescription(BaseModel):
    index: int
    retained: bool
    key_dim: int
    value_dim: int
    value_mean_pooling: bool = False


class BlockDescription(BaseModel):
    index: int
    heads: list[HeadDescription]
    attention_layers: list[list[int]]  # residual layers of retained head indices
    ff_layers: list[list[int]]  # residual layers of retained slice widths
    ln_mean: list[bool]  # [after attention, after feedforward]
    attention_dropped: bool = False
    ff_dropped: bool = False


class ArchitectureDescription(BaseModel):
    """Portable description of a selected architecture.

    ``gates`` preserves the exact post-extraction gate values (including
    fractional connection gates), so a network rebuilt from the description
    plus a weight checkpoint reproduces the pruned one-shot network.
    """

    schema_version: int = SCHEMA_VERSION
    space: SearchSpaceConfig
    blocks: list[BlockDescription]
    gates: dict[str, float]
    predicted_cost: float
    predicted_speedup: float
    speedup_infinite: bool = False
    provenance: Provenance = Field(default_factory=Provenance)


class MetricRecord(BaseModel):
    """One line of the run metrics stream."""

    step: int
    L_orig: float
    L_cost: float
    L_total: float
    cost_binary: float
    metric: Optional[float] = None


class RunConfig(BaseModel):
    """Everything one search run needs; the unit of reproducibility."""

    schema_version: int = SCHEMA_VERSION
    space: SearchSpaceConfig = Field(default_factory=SearchSpaceConfig)
    task: TaskConfig = Field(default_factory=TaskConfig)
    hyperparams: Hyperparams = Field(default_factory=Hyperparams)
    algorithm: Algorithm = "sdo"
    profile: Optional[CostProfile] = None


class GridPoint(BaseModel):
    algorithm: Algorithm
    cost_weight: float
    policy_lr: Optional[float] = None
    metric: float
    cost: float
    speedup: Optional[float] = None  # None when the architecture is empty


class GridResult(BaseModel):
    schema_version: int = SCHEMA_VERSION
    rows: list[GridPoint]
    best_index: Optional[int] = None
    quality_floor: float
    baseline_metric: float
