"""Pydantic schemas for environments and offline datasets."""
from typing import List, Literal

from pydantic import BaseModel, Field, model_validator

RewardKind = Literal["sparse_goal", "quadratic_bandit", "shaped"]
Behavior = Literal["expert_noisy", "medium", "random_safe"]


class EnvSpec(BaseModel):
    """Static description of an environment's spaces and horizon."""

    name: str
    state_dim: int = Field(..., gt=0)
    action_dim: int = Field(..., gt=0)
    action_low: List[float]
    action_high: List[float]
    gamma: float = Field(..., gt=0.0, lt=1.0)
    horizon: int = Field(..., gt=0)
    reward_kind: RewardKind

    @model_validator(mode="after")
    def check_bounds(self):
        if len(self.action_low) != self.action_dim or len(self.action_high) != self.action_dim:
            raise ValueError("Action bounds must have one entry per action dimension")
        if any(low >= high for low, high in zip(self.action_low, self.action_high)):
            raise ValueError("Action bounds need low < high in every dimension")
        return self


class DatasetMetadata(BaseModel):
    """Header stored with every offline dataset file."""

    env: str
    behavior: Behavior
    noise: float
    seed: int
    n_pairs: int
    state_dim: int
    action_dim: int
    shuffled: bool = True
