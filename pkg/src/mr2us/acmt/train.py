"""Translator training loop and volume translation.

One training step follows the bridge recipe: draw a pool time, roll both
modalities out to it with parameters locked, then predict the terminal state
for each and take one optimizer step on the weighted sum of bridge,
boundary, and texture losses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..errors import ConfigError, NumericError, ValidationError
from ..types import Volume
from .bridge import BridgeSchedule, rollout
from .losses import boundary_loss, sb_loss, texture_loss
from .net import TranslatorNet


@dataclass
class AcmtLossWeights:
    sb: float = 1.0
    boundary: float = 1.0
    texture: float = 0.5

    def __post_init__(self):
        if min(self.sb, self.boundary, self.texture) < 0:
            raise ValidationError("loss weights must be non-negative")
        if self.sb == self.boundary == self.texture == 0:
            raise ValidationError("at least one loss weight must be > 0")


def _to_batch_tensor(x, ndim):
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim == ndim:  # single image/volume
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr))[:, None]


def train_step(mr_x0, us_x0, net: TranslatorNet, schedule: BridgeSchedule,
               weights: AcmtLossWeights, rng, optimizer, use_entropy=True):
    """One optimizer update; returns the component loss report.

    mr_x0 / us_x0: numpy arrays, (B, H, W) slice batches for 2D nets or a
    single (X, Y, Z) volume for 3D nets. Pairing may be unaligned; training
    is unsupervised.
    """
    times = schedule.times
    t_i = float(times[rng.integers(len(times))])

    net.eval()
    x_ti_mr = rollout(mr_x0, t_i, net.predict_np, schedule, rng)
    x_ti_us = rollout(us_x0, t_i, net.predict_np, schedule, rng)

    net.train()
    xt_mr = _to_batch_tensor(x_ti_mr, net.ndim)
    xt_us = _to_batch_tensor(x_ti_us, net.ndim)
    x1_mr = net(xt_mr, t_i)
    x1_us = net(xt_us, t_i)

    l_sb = (sb_loss(xt_mr, x1_mr, t_i, schedule.sigma, use_entropy)
            + sb_loss(xt_us, x1_us, t_i, schedule.sigma, use_entropy)) / 2.0

    x0_mr = _to_batch_tensor(mr_x0, net.ndim)
    x0_us = _to_batch_tensor(us_x0, net.ndim)
    f0s_mr, f0d_mr = net.features(x0_mr, 0.0)
    f0s_us, f0d_us = net.features(x0_us, 0.0)
    f1s_mr, f1d_mr = net.features(x1_mr, 1.0)
    f1s_us, f1d_us = net.features(x1_us, 1.0)

    l_boundary = boundary_loss(f0d_mr, f1d_mr, f0d_us, f1d_us, net.proj3)
    l_texture = texture_loss(f1s_mr, f1s_us, net.proj7)

    total = (weights.sb * l_sb + weights.boundary * l_boundary
             + weights.texture * l_texture)
    if not torch.isfinite(total):
        raise NumericError(
            f"non-finite loss at t_i={t_i}: sb={float(l_sb)} "
            f"boundary={float(l_boundary)} texture={float(l_texture)}"
        )
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return {
        "t_i": t_i,
        "sb": float(l_sb.detach()),
        "boundary": float(l_boundary.detach()),
        "texture": float(l_texture.detach()),
        "total": float(total.detach()),
    }


def translate(x0: Volume, net: TranslatorNet, schedule: BridgeSchedule, rng,
              mode: str = "slice2d") -> Volume:
    """Full bridge rollout of a volume to t = 1, clamped to [0, 1].

    slice2d applies the 2D net independently per transverse slice along the
    sweep axis (Z) and restacks; full3d feeds the whole volume to a 3D net.
    """
    if mode == "slice2d":
        if net.ndim != 2:
            raise ValidationError("slice2d mode needs a 2D net")
        slices = np.moveaxis(x0.voxels.astype(np.float64), 2, 0)  # (Z, X, Y)
        out = rollout(slices, schedule.times[-1], net.predict_np, schedule, rng)
        voxels = np.moveaxis(out, 0, 2)
    elif mode == "full3d":
        if net.ndim != 3:
            raise ValidationError("full3d mode needs a 3D net")
        voxels = rollout(x0.voxels.astype(np.float64), schedule.times[-1],
                         net.predict_np, schedule, rng)
    else:
        raise ValidationError(f"unknown translate mode {mode!r}")
    return Volume(np.clip(voxels, 0.0, 1.0).astype(np.float32), x0.spacing)


def save_checkpoint(path, net: TranslatorNet, schedule: BridgeSchedule,
                    weights: AcmtLossWeights, step: int, seed: int):
    """Parameter blob (<path>.pt) plus JSON sidecar (<path>.json)."""
    path = Path(path)
    torch.save(net.state_dict(), path.with_suffix(".pt"))
    sidecar = {
        "net": net.config(),
        "schedule": {"times": list(schedule.times), "sigma": schedule.sigma},
        "weights": {"sb": weights.sb, "boundary": weights.boundary,
                    "texture": weights.texture},
        "step": step,
        "seed": seed,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def load_checkpoint(path):
    """Returns (net, schedule, weights, sidecar). Validates the sidecar."""
    path = Path(path)
    try:
        sidecar = json.loads(path.with_suffix(".json").read_text())
    except FileNotFoundError:
        raise ConfigError(f"missing checkpoint sidecar {path.with_suffix('.json')}")
    net = TranslatorNet(**sidecar["net"])
    state = torch.load(path.with_suffix(".pt"), weights_only=True)
    try:
        net.load_state_dict(state)
    except RuntimeError as e:
        raise ConfigError(f"checkpoint does not match sidecar config: {e}")
    schedule = BridgeSchedule(tuple(sidecar["schedule"]["times"]),
                              sidecar["schedule"]["sigma"])
    w = sidecar["weights"]
    weights = AcmtLossWeights(w["sb"], w["boundary"], w["texture"])
    return net, schedule, weights, sidecar
