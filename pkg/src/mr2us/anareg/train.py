"""Registration training and inference.

The field is always estimated from the translated (intermediate-modality)
pair but applied to the original volumes at inference time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..errors import ConfigError, NumericError, ValidationError
from ..types import DeformationField, Volume
from .losses import diffusion_loss, sim_loss, smooth_loss
from .net import RegNet
from .warp import spatial_transform, warp_tensor

DEFAULT_NOISE_LEVEL = 0.1


@dataclass
class RegLossWeights:
    sim: float = 1.0
    smooth: float = 0.1
    diff: float = 0.5

    def __post_init__(self):
        if min(self.sim, self.smooth, self.diff) < 0:
            raise ValidationError("loss weights must be non-negative")
        if self.sim <= 0:
            raise ValidationError("sim weight must be > 0")


@dataclass
class NoiseDraw:
    noise: np.ndarray
    level: float


def add_noise(fixed: Volume, level: float, rng):
    """Additive Gaussian perturbation of the fixed image; the draw is kept
    for the denoising loss."""
    if level < 0:
        raise ValidationError("noise level must be >= 0")
    n = (rng.normal(0.0, level, size=fixed.dims) if level > 0
         else np.zeros(fixed.dims))
    noisy = Volume((fixed.voxels.astype(np.float64) + n).astype(np.float32),
                   fixed.spacing)
    return noisy, NoiseDraw(n.astype(np.float32), level)


def _vol_tensor(v: Volume):
    return torch.from_numpy(v.voxels.astype(np.float32))[None, None]


def forward(moving_t: Volume, fixed_t: Volume, noisy_fixed: Volume, net: RegNet):
    """One network pass -> (DeformationField, score Volume). Deterministic
    given parameters and inputs."""
    if not moving_t.dims == fixed_t.dims == noisy_fixed.dims:
        raise ValidationError("registration inputs must share dims")
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            phi, score = net(_vol_tensor(moving_t), _vol_tensor(fixed_t),
                             _vol_tensor(noisy_fixed))
    finally:
        net.train(was_training)
    return (DeformationField(phi[0].numpy()),
            Volume(score[0, 0].numpy(), moving_t.spacing))


def train_step(moving_t: Volume, fixed_t: Volume, net: RegNet,
               weights: RegLossWeights, noise_level: float, rng, optimizer):
    """Draw noise, predict (phi, S), warp, and take one optimizer step."""
    noisy, draw = add_noise(fixed_t, noise_level, rng)
    net.train()
    mv = _vol_tensor(moving_t)
    fx = _vol_tensor(fixed_t)
    phi, score = net(mv, fx, _vol_tensor(noisy))
    warped = warp_tensor(mv, phi)

    l_sim = sim_loss(fx[0, 0], warped[0, 0])
    l_smooth = smooth_loss(phi)
    l_diff = diffusion_loss(score[0, 0], torch.from_numpy(draw.noise))
    total = weights.sim * l_sim + weights.smooth * l_smooth + weights.diff * l_diff
    if not torch.isfinite(total):
        raise NumericError(
            f"non-finite registration loss: sim={float(l_sim)} "
            f"smooth={float(l_smooth)} diff={float(l_diff)}"
        )
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return {
        "sim": float(l_sim.detach()),
        "smooth": float(l_smooth.detach()),
        "diff": float(l_diff.detach()),
        "total": float(total.detach()),
    }


def register(mr_original: Volume, us_original: Volume, mr_translated: Volume,
             us_translated: Volume, net: RegNet):
    """Estimate phi on the translated pair, apply it to the original MR.

    Inference runs with a zero noise draw, so results are deterministic.
    Returns (warped_mr_original, phi).
    """
    dims = {mr_original.dims, us_original.dims, mr_translated.dims,
            us_translated.dims}
    if len(dims) != 1:
        raise ValidationError(f"volume dims disagree: {sorted(dims)}")
    noisy = Volume(us_translated.voxels.copy(), us_translated.spacing)
    phi, _ = forward(mr_translated, us_translated, noisy, net)
    warped = spatial_transform(mr_original, phi, "trilinear")
    return warped, phi


def save_checkpoint(path, net: RegNet, weights: RegLossWeights,
                    noise_level: float, step: int, seed: int):
    path = Path(path)
    torch.save(net.state_dict(), path.with_suffix(".pt"))
    sidecar = {
        "net": {"base": net.enc[0].block[0].out_channels,
                "levels": len(net.enc), "guidance": net.guidance},
        "weights": {"sim": weights.sim, "smooth": weights.smooth,
                    "diff": weights.diff},
        "noise_level": noise_level,
        "step": step,
        "seed": seed,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def load_checkpoint(path):
    path = Path(path)
    try:
        sidecar = json.loads(path.with_suffix(".json").read_text())
    except FileNotFoundError:
        raise ConfigError(f"missing checkpoint sidecar {path.with_suffix('.json')}")
    net = RegNet(**sidecar["net"])
    state = torch.load(path.with_suffix(".pt"), weights_only=True)
    try:
        net.load_state_dict(state)
    except RuntimeError as e:
        raise ConfigError(f"checkpoint does not match sidecar config: {e}")
    w = sidecar["weights"]
    return net, RegLossWeights(w["sim"], w["smooth"], w["diff"]), sidecar
