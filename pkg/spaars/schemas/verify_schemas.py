"""Pydantic schemas for verification reports."""
from typing import Any, Dict, Literal, Optional

from pydantic import BaseModel, Field, computed_field

StatusOverride = Literal["inconclusive", "not_applicable", "qualitative"]


class BoundReport(BaseModel):
    """Measured quantity against its theoretical bound; the verdict is always recomputed."""

    name: str
    measured: float
    bound: float
    tolerance: float = Field(0.0, ge=0.0)
    inputs: Dict[str, float] = Field(default_factory=dict)
    override: Optional[StatusOverride] = None
    notes: str = ""
    extra: Dict[str, Any] = Field(default_factory=dict)

    @computed_field
    @property
    def slack(self) -> float:
        return self.bound - self.measured

    @computed_field
    @property
    def passed(self) -> bool:
        return bool(self.measured <= self.bound + abs(self.bound) * self.tolerance)

    @computed_field
    @property
    def status(self) -> str:
        if self.override is not None:
            return self.override
        return "pass" if self.passed else "fail"

    @property
    def counts_as_failure(self) -> bool:
        return self.status == "fail"


class VerifyConfig(BaseModel):
    """Sizes used by the verification suite."""

    bandit_action_dim: int = Field(4, gt=0)
    bandit_latent_dim: int = Field(1, gt=0)
    dataset_pairs: int = Field(4000, gt=0)
    cvae_epochs: int = Field(40, gt=0)
    critic_steps: int = Field(3000, gt=0)
    bc_steps: int = Field(2000, gt=0)
    variance_samples: int = Field(100_000, ge=100)
    probe_sigma: float = Field(0.2, gt=0.0)
    grid_resolution: int = Field(41, ge=5)
    calibration_samples: int = Field(2000, gt=0)
    delta: float = Field(0.05, gt=0.0, lt=1.0)
    regret_noise_levels: list = Field(default_factory=lambda: [0.05, 0.1, 0.2])
    regret_seeds: int = Field(50, gt=0)
    smoothness_steps: int = Field(4000, gt=0)
    convergence_steps: int = Field(6000, gt=0)
