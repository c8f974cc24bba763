from .bridge import BridgeSchedule, cfm_interpolate, diffusion_step, rollout
from .losses import boundary_loss, gaussian_entropy, sb_loss, sobel, texture_loss
from .net import TranslatorNet
from .train import (
    AcmtLossWeights,
    load_checkpoint,
    save_checkpoint,
    train_step,
    translate,
)

__all__ = [
    "BridgeSchedule",
    "cfm_interpolate",
    "diffusion_step",
    "rollout",
    "sb_loss",
    "boundary_loss",
    "texture_loss",
    "sobel",
    "gaussian_entropy",
    "TranslatorNet",
    "AcmtLossWeights",
    "train_step",
    "translate",
    "save_checkpoint",
    "load_checkpoint",
]
