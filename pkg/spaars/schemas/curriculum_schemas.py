"""Pydantic schemas for the phase machine, the advantage gate and the metrics stream."""
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

Variant = Literal["schedule", "gate", "latent_only"]
Phase = Literal["CvaePretrain", "LatentExploration", "Transition", "RawExploitation", "GateActive"]
GateMode = Literal["latent", "raw"]
GateReason = Literal["warmup", "margin_fail", "disagreement", "fired"]


class PlateauConfig(BaseModel):
    """RND plateau: relative change of the intrinsic-reward EMA over a window."""

    window: int = Field(10, gt=0, description="W, in episodes")
    tau: float = Field(0.01, gt=0.0)
    ema_decay: float = Field(0.9, ge=0.0, lt=1.0)


class GateConfig(BaseModel):
    """Advantage gate thresholds and safeguards."""

    margin: float = Field(3.0, ge=0.0)
    sigma_max: float = Field(10.0, gt=0.0)
    warmup_steps: Optional[int] = Field(None, ge=0, description="T_warm; default 2*W episodes of steps")
    commitment: int = Field(1, ge=1, description="H, steps a decision is held")


class CurriculumConfig(BaseModel):
    """Phase machine settings."""

    variant: Variant = "schedule"
    eps_bc: float = Field(0.1, gt=0.0)
    plateau: PlateauConfig = Field(default_factory=PlateauConfig)
    ramp_steps: Optional[int] = Field(None, gt=0, description="default 25% of the step budget")
    gate: GateConfig = Field(default_factory=GateConfig)


class GateDecision(BaseModel):
    """Per-state mode choice with the ensemble statistics behind it."""

    mode: GateMode
    q_raw_mean: float
    q_z_mean: float
    sigma_raw: float
    reason: GateReason

    @model_validator(mode="after")
    def raw_only_when_fired(self):
        if (self.mode == "raw") != (self.reason == "fired"):
            raise ValueError("mode is raw exactly when reason is fired")
        return self

    @property
    def advantage(self) -> float:
        return self.q_raw_mean - self.q_z_mean


class MetricsRecord(BaseModel):
    """One line of the metrics stream; the field order is the export column order."""

    kind: Literal["step", "eval", "phase"]
    step: int
    seed: int
    phase: Phase
    alpha: Optional[float] = None
    mode: Optional[GateMode] = None
    reason: Optional[GateReason] = None
    q_raw_mean: Optional[float] = None
    q_z_mean: Optional[float] = None
    sigma_raw: Optional[float] = None
    r_ext: Optional[float] = None
    r_int: Optional[float] = None
    r_int_ema: Optional[float] = None
    l_bc: Optional[float] = None
    eval_return: Optional[float] = None
    state: Optional[List[float]] = None


METRICS_COLUMNS = list(MetricsRecord.model_fields)
