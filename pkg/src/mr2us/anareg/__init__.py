from .losses import anatomy_weight, diffusion_loss, sim_loss, smooth_loss
from .net import RegNet
from .train import (
    NoiseDraw,
    RegLossWeights,
    add_noise,
    forward,
    load_checkpoint,
    register,
    save_checkpoint,
    train_step,
)
from .warp import spatial_transform, warp_tensor

__all__ = [
    "anatomy_weight",
    "sim_loss",
    "smooth_loss",
    "diffusion_loss",
    "RegNet",
    "RegLossWeights",
    "NoiseDraw",
    "add_noise",
    "forward",
    "train_step",
    "register",
    "save_checkpoint",
    "load_checkpoint",
    "spatial_transform",
    "warp_tensor",
]
