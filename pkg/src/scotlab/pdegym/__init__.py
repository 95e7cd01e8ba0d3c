"""Desk-scale PDE data generators."""

from .dataset import DatasetFormatError, TrajectoryDataset, read_dataset, write_dataset
from .tasks import TASKS, generate, resolve_task, trajectory_rng

__all__ = ["DatasetFormatError", "TASKS", "TrajectoryDataset", "generate", "read_dataset", "resolve_task",
           "trajectory_rng", "write_dataset"]
