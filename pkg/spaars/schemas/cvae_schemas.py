"""Pydantic schemas for CVAE training."""
from typing import List, Optional

from pydantic import BaseModel, Field


class CvaeTrainConfig(BaseModel):
    """ELBO training settings, including the posterior-collapse mitigations."""

    latent_dim: Optional[int] = Field(None, ge=1, description="k; default ceil(d/2)")
    hidden_sizes: List[int] = Field(default_factory=lambda: [32, 32])
    beta_max: float = Field(0.5, ge=0.0, le=1.0)
    anneal_steps: int = Field(1000, ge=0, description="optimizer steps until beta reaches beta_max")
    free_bits: float = Field(0.05, ge=0.0, description="nats per latent dimension")
    batch_size: int = Field(128, gt=0)
    epochs: int = Field(60, gt=0)
    learning_rate: float = Field(1e-3, gt=0.0)
    use_mean_batchnorm: bool = True
    batchnorm_momentum: float = Field(0.1, gt=0.0, le=1.0)
    latent_box: float = Field(3.0, gt=0.0, description="prior std multiples searched by oracles")


class CvaeEpochMetrics(BaseModel):
    """Per-epoch training record."""

    epoch: int
    reconstruction: float
    kl: float
    beta: float
    loss: float


class CollapseReport(BaseModel):
    """KL-based mutual-information proxy between latent code and action."""

    per_dim_kl: List[float]
    mi_proxy: float
    epsilon_info: float
    collapsed: bool
