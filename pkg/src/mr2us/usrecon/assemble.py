"""Sparse 3D volume assembly from localized transverse frames."""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from ..types import Frame2D, Volume


def assemble_sparse_volume(frames, z_positions, dims, spacing=(1.0, 1.0, 1.0)) -> Volume:
    """Write each transverse frame into its z-plane through its fan mask.

    Collisions (two frames on the same plane) are averaged. The returned
    volume's validity grid marks written voxels; everything else is 0.
    Frames with position None (skipped during stitching) are ignored.
    """
    X, Y, Z = dims
    acc = np.zeros(dims, dtype=np.float64)
    cnt = np.zeros(dims, dtype=np.int32)
    for frame, z in zip(frames, z_positions):
        if z is None:
            continue
        if not 0 <= z < Z:
            raise ValidationError(f"frame z position {z} outside volume depth {Z}")
        if frame.shape != (X, Y):
            raise ValidationError(
                f"transverse frame shape {frame.shape} does not match volume XY ({X},{Y})"
            )
        valid = frame.validity if frame.validity is not None else np.ones((X, Y), bool)
        acc[:, :, z][valid] += frame.pixels[valid]
        cnt[:, :, z][valid] += 1
    out = np.zeros(dims, dtype=np.float64)
    np.divide(acc, cnt, out=out, where=cnt > 0)
    return Volume(out.astype(np.float32), spacing, validity=cnt > 0)
