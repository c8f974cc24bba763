"""Registration losses: anatomy-aware soft Dice, field smoothness, denoising.

The anatomy weighting maps dark voxels (prostate interior) toward 1 and
bright voxels (boundary rim) toward 0, so the similarity term concentrates
on the anatomically coherent interior. All functions accept torch tensors
(differentiable) or numpy arrays.
"""

from __future__ import annotations

import numpy as np
import torch

from ..errors import ValidationError

DICE_EPS = 1e-6


def _t(x):
    if torch.is_tensor(x):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def anatomy_weight(x):
    """sigmoid(-(x - mean(x))), mean over the whole volume. Values in (0, 1),
    0.5 at mean intensity, strictly decreasing in intensity, invariant to
    adding a constant."""
    xt = _t(x)
    out = torch.sigmoid(-(xt - xt.mean()))
    if not torch.is_tensor(x):
        return out.numpy()
    return out


def sim_loss(fixed_t, warped_t):
    """Soft Dice loss between anatomy-weighted volumes (symmetric)."""
    a, b = _t(fixed_t), _t(warped_t)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {a.shape} vs {b.shape}")
    wa = torch.sigmoid(-(a - a.mean()))
    wb = torch.sigmoid(-(b - b.mean()))
    num = 2.0 * (wa * wb).sum() + DICE_EPS
    den = wa.sum() + wb.sum() + DICE_EPS
    return 1.0 - num / den


def smooth_loss(phi):
    """Sum of squared forward-difference gradients of all field components.

    phi: (3, X, Y, Z) or batched (B, 3, X, Y, Z); the last difference per
    axis is omitted at the boundary.
    """
    p = _t(phi)
    if p.ndim == 4:
        p = p[None]
    if p.ndim != 5 or p.shape[1] != 3:
        raise ValidationError(f"expected (3, X, Y, Z) field, got {tuple(phi.shape)}")
    total = p.new_zeros(())
    for axis in range(2, 5):
        d = torch.diff(p, dim=axis)
        total = total + (d**2).sum()
    return total


def diffusion_loss(score, noise):
    """Sum of squared differences between predicted score and drawn noise."""
    s, n = _t(score), _t(noise)
    if s.shape != n.shape:
        raise ValidationError(f"shape mismatch {s.shape} vs {n.shape}")
    return ((s - n) ** 2).sum()
