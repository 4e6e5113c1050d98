"""Latent-space reasoning RL: a trainable Gaussian policy over latent
trajectories, a frozen decoder, verifiable rewards, and group-relative
policy optimization with a contrastive dispersion term."""

from .core import RunConfig, TaskInstance, TrajectoryGroup, LatentTrajectory, load_config, validate_config
from .errors import (
    BudgetError, ChecksumError, ConfigError, DomainError, GroupError, LatentRLError,
    NormError, NumericalError, ShapeError, SpecError,
)
from .kernels import BACKEND
from .trainer import RunArtifacts, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "RunConfig", "TaskInstance", "TrajectoryGroup", "LatentTrajectory",
    "load_config", "validate_config", "train", "evaluate", "RunArtifacts",
    "LatentRLError", "ConfigError", "SpecError", "DomainError", "GroupError", "ShapeError",
    "NormError", "BudgetError", "NumericalError", "ChecksumError",
]
