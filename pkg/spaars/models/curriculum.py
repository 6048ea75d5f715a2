"""Mutable state owned by the phase machine."""
from dataclasses import dataclass, field
from typing import List, Optional

from spaars.schemas.curriculum_schemas import GateDecision


@dataclass
class PlateauTracker:
    """EMA of per-episode intrinsic reward and the last window+1 EMA values."""

    window: int
    tau: float
    ema_decay: float
    ema: Optional[float] = None
    history: List[float] = field(default_factory=list)
    episodes: int = 0
    plateaued: bool = False


@dataclass
class CurriculumState:
    variant: str
    phase: str
    plateau: PlateauTracker
    ramp_steps: int
    warmup_steps: int
    alpha: float = 0.0
    env_step: int = 0
    transition_start: Optional[int] = None
    last_l_bc: Optional[float] = None
    commitment_left: int = 0
    held_decision: Optional[GateDecision] = None
    phase_history: List[str] = field(default_factory=list)


@dataclass
class ActionChoice:
    """What the behaviour policy executed at one step and why."""

    action: object
    z: object
    source: str
    alpha: Optional[float] = None
    decision: Optional[GateDecision] = None


@dataclass
class TrainingResult:
    run_dir: object
    metrics_path: object
    state: CurriculumState
    bundle: object
    model: object
    eval_returns: List = field(default_factory=list)
