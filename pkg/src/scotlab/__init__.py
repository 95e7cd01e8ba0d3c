"""Lead-time-conditioned multiscale operator transformer with a desk-scale PDE data suite."""

from .model import ScotConfig, ScotModel, load_checkpoint, micro_config, rollout, save_checkpoint
from .training import FinetuneConfig, TrainConfig, finetune, pretrain, relative_l1_loss, to_layout

__all__ = ["FinetuneConfig", "ScotConfig", "ScotModel", "TrainConfig", "finetune", "load_checkpoint", "micro_config",
           "pretrain", "relative_l1_loss", "rollout", "save_checkpoint", "to_layout"]
__version__ = "0.1.0"
