"""Pydantic schema for a complete training run."""
from typing import Any, Dict, Optional

from pydantic import BaseModel, Field, model_validator

from spaars.schemas.curriculum_schemas import CurriculumConfig
from spaars.schemas.cvae_schemas import CvaeTrainConfig
from spaars.schemas.rl_schemas import LearnerConfig


class RunConfig(BaseModel):
    """Everything needed to reproduce a training run; archived with its outputs."""

    env: str
    env_options: Dict[str, Any] = Field(default_factory=dict)
    dataset_path: str
    cvae_checkpoint: Optional[str] = None
    cvae: CvaeTrainConfig = Field(default_factory=CvaeTrainConfig)
    curriculum: CurriculumConfig = Field(default_factory=CurriculumConfig)
    learner: LearnerConfig = Field(default_factory=LearnerConfig)
    total_steps: int = Field(20_000, gt=0)
    eval_interval: int = Field(1000, gt=0)
    eval_episodes: int = Field(10, gt=0)
    checkpoint_interval: int = Field(5000, gt=0)
    snapshot_interval: int = Field(2000, gt=0)
    seed: int = 0
    output_dir: str = "run"

    @model_validator(mode="after")
    def check_budget(self):
        if self.learner.num_min_qs > self.learner.ensemble_size:
            raise ValueError("num_min_qs cannot exceed ensemble_size")
        return self
