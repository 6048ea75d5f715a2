"""Pydantic schemas for the actor-critic learners."""
from typing import List, Literal

from pydantic import BaseModel, Field


class LearnerConfig(BaseModel):
    """Hyperparameters shared by the latent actor, raw actor, critic ensemble and RND."""

    hidden_sizes: List[int] = Field(default_factory=lambda: [64, 64])
    actor_lr: float = Field(3e-4, gt=0.0)
    critic_lr: float = Field(3e-4, gt=0.0)
    bc_lr: float = Field(1e-3, gt=0.0)
    temperature_lr: float = Field(3e-4, gt=0.0)
    batch_size: int = Field(64, gt=0)
    buffer_capacity: int = Field(100_000, gt=0)
    ensemble_size: int = Field(4, ge=2)
    num_min_qs: int = Field(2, ge=1)
    polyak: float = Field(0.995, gt=0.0, lt=1.0, description="target <- polyak*target + (1-polyak)*online")
    init_temperature: float = Field(0.1, gt=0.0)
    auto_temperature: bool = True
    learning_starts: int = Field(256, ge=0)
    rnd_hidden_sizes: List[int] = Field(default_factory=lambda: [64, 64])
    rnd_output_dim: int = Field(16, gt=0)
    rnd_lr: float = Field(1e-3, gt=0.0)
    intrinsic_weight: float = Field(1.0, ge=0.0, description="lambda for r_ext + lambda*r_int in phase 1")


class VarianceProbeResult(BaseModel):
    """Score-function gradient variance of a Gaussian policy mean under a fixed critic."""

    space: Literal["latent", "raw"]
    dim: int
    n_samples: int
    sigma: float
    grad_variance: float = Field(..., description="trace of the covariance of the per-sample gradient")
    q_variance: float
    grad_mean_norm: float
