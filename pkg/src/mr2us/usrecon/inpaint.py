"""Missing-voxel inpainting of the sparse reconstructed volume.

Two methods:
  * "interp": deterministic linear interpolation along z between nearest
    observed planes (clamped extrapolation). Serves as the oracle/baseline.
  * "dip": untrained 3D encoder-decoder fitted to the observed voxels only
    (deep-image-prior style), filling unobserved voxels from the network's
    inductive bias.
"""

from __future__ import annotations

import warnings

import numpy as np
import torch
import torch.nn as nn

from ..errors import ValidationError
from ..types import Volume

DIP_TOLERANCE = 0.02


def interp_inpaint(sparse: Volume) -> Volume:
    """Fill each (x, y) column by linear interpolation along z.

    Observed voxels are reproduced exactly; columns with no observation at
    all stay 0. Output validity is all ones.
    """
    if sparse.validity is None or not sparse.validity.any():
        raise ValidationError("interp_inpaint requires a nonempty validity grid")
    X, Y, Z = sparse.dims
    out = np.zeros((X, Y, Z), dtype=np.float64)
    zs = np.arange(Z)
    vox = sparse.voxels.astype(np.float64)
    val = sparse.validity
    for x in range(X):
        for y in range(Y):
            obs = np.nonzero(val[x, y])[0]
            if len(obs) == 0:
                continue
            out[x, y] = np.interp(zs, obs, vox[x, y, obs])
    return Volume(out.astype(np.float32), sparse.spacing,
                  validity=np.ones((X, Y, Z), bool))


class _DipNet(nn.Module):
    """Small 4-level 3D encoder-decoder with a fixed noise input."""

    def __init__(self, in_ch=8, base=16, levels=4):
        super().__init__()
        chans = [min(base * 2**i, 64) for i in range(levels)]
        self.encoders = nn.ModuleList()
        prev = in_ch
        for c in chans:
            self.encoders.append(nn.Sequential(
                nn.Conv3d(prev, c, 3, stride=2, padding=1),
                nn.GroupNorm(min(8, c), c),
                nn.LeakyReLU(0.1),
                nn.Conv3d(c, c, 3, padding=1),
                nn.GroupNorm(min(8, c), c),
                nn.LeakyReLU(0.1),
            ))
            prev = c
        self.decoders = nn.ModuleList()
        for c in reversed(chans):
            self.decoders.append(nn.Sequential(
                nn.Conv3d(prev, c, 3, padding=1),
                nn.GroupNorm(min(8, c), c),
                nn.LeakyReLU(0.1),
            ))
            prev = c
        self.head = nn.Conv3d(prev, 1, 1)

    def forward(self, x):
        for enc in self.encoders:
            x = enc(x)
        for dec in self.decoders:
            x = nn.functional.interpolate(x, scale_factor=2, mode="trilinear",
                                          align_corners=False)
            x = dec(x)
        return torch.sigmoid(self.head(x))


def _pad_to_multiple(arr, mult):
    pads = [(0, (-s) % mult) for s in arr.shape]
    return np.pad(arr, pads), pads


def dip_inpaint(sparse: Volume, iters: int = 2000, lr: float = 0.01,
                seed: int = 0, tol: float = DIP_TOLERANCE, patience: int = 300):
    """Deep-image-prior inpainting; returns (Volume, info dict).

    Optimizes a masked L2 loss on observed voxels from a fixed-noise input.
    Stops early when the loss plateaus. If the observed-voxel MAE stays above
    `tol`, a warning is emitted and info["converged"] is False.
    """
    if sparse.validity is None or not sparse.validity.any():
        raise ValidationError("dip_inpaint requires a nonempty validity grid")
    torch.manual_seed(seed)
    # keep the bottleneck at >= 2 voxels per axis
    levels = max(1, min(4, int(np.log2(min(sparse.dims))) - 1))
    mult = 2**levels
    vox, _ = _pad_to_multiple(sparse.voxels.astype(np.float32), mult)
    mask, _ = _pad_to_multiple(sparse.validity.astype(np.float32), mult)
    target = torch.from_numpy(vox)[None, None]
    m = torch.from_numpy(mask)[None, None]
    noise = torch.rand(1, 8, *vox.shape) * 0.1

    net = _DipNet(levels=levels)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    best = float("inf")
    best_iter = 0
    out = None
    for it in range(iters):
        opt.zero_grad()
        out = net(noise)
        loss = ((out - target) ** 2 * m).sum() / m.sum()
        loss.backward()
        opt.step()
        cur = float(loss)
        if cur < best * (1 - 1e-4):
            best = cur
            best_iter = it
        elif it - best_iter > patience:
            break

    with torch.no_grad():
        out = net(noise)[0, 0].numpy()
    X, Y, Z = sparse.dims
    dense = out[:X, :Y, :Z]
    observed_mae = float(np.abs(dense - sparse.voxels)[sparse.validity].mean())
    converged = observed_mae <= tol
    if not converged:
        warnings.warn(
            f"DIP did not reach observed-voxel MAE <= {tol} "
            f"(got {observed_mae:.4f}); returning best-effort result"
        )
    info = {"converged": converged, "iterations": it + 1,
            "observed_mae": observed_mae, "final_loss": best}
    vol = Volume(np.clip(dense, 0.0, 1.0), sparse.spacing,
                 validity=np.ones((X, Y, Z), bool))
    return vol, info


def inpaint_volume(sparse: Volume, method: str = "interp", **kwargs) -> Volume:
    """Dispatch to the configured inpainting method."""
    if method == "interp":
        return interp_inpaint(sparse)
    if method == "dip":
        vol, _ = dip_inpaint(sparse, **kwargs)
        return vol
    raise ValidationError(f"unknown inpainting method {method!r}")
