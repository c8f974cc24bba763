"""Spatial transformer: warp a volume by a per-voxel displacement field.

output(v) = moving(v + phi(v)), displacements in voxel units, border-clamped
sampling, differentiable with respect to both inputs under trilinear
interpolation.
"""

from __future__ import annotations

import numpy as np
import torch

from ..errors import ValidationError
from ..types import DeformationField, Volume


def warp_tensor(moving, phi, interp="trilinear"):
    """Torch core: moving (B, C, X, Y, Z), phi (B, 3, X, Y, Z) -> warped.

    phi components are (dx, dy, dz) in voxel units.
    """
    if interp not in ("trilinear", "nearest"):
        raise ValidationError(f"unknown interpolation {interp!r}")
    if moving.shape[2:] != phi.shape[2:] or phi.shape[1] != 3:
        raise ValidationError(
            f"field shape {tuple(phi.shape)} does not match volume {tuple(moving.shape)}"
        )
    X, Y, Z = moving.shape[2:]
    dtype = moving.dtype
    device = moving.device
    base = torch.stack(torch.meshgrid(
        torch.arange(X, dtype=dtype, device=device),
        torch.arange(Y, dtype=dtype, device=device),
        torch.arange(Z, dtype=dtype, device=device),
        indexing="ij"), dim=0)  # (3, X, Y, Z)
    pos = base[None] + phi  # sample positions in voxel units
    # grid_sample wants normalized coords ordered (z, y, x) in the last dim
    scale = torch.tensor(
        [max(X - 1, 1), max(Y - 1, 1), max(Z - 1, 1)], dtype=dtype, device=device)
    norm = 2.0 * pos / scale.reshape(1, 3, 1, 1, 1) - 1.0
    grid = norm.permute(0, 2, 3, 4, 1).flip(-1)
    mode = "bilinear" if interp == "trilinear" else "nearest"
    return torch.nn.functional.grid_sample(
        moving, grid, mode=mode, padding_mode="border", align_corners=True)


def spatial_transform(moving: Volume, phi: DeformationField,
                      interp: str = "trilinear") -> Volume:
    """Numpy-facing warp of a Volume by a DeformationField."""
    if moving.dims != phi.dims:
        raise ValidationError(
            f"field dims {phi.dims} do not match volume dims {moving.dims}"
        )
    mv = torch.from_numpy(moving.voxels.astype(np.float64))[None, None]
    ph = torch.from_numpy(phi.disp.astype(np.float64))[None]
    out = warp_tensor(mv, ph, interp)[0, 0].numpy()
    return Volume(out.astype(np.float32), moving.spacing)
