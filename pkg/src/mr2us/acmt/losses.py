"""Training losses for the modality translator.

Conventions: the bridge-consistency loss uses a per-element mean square,
the boundary loss an L1 sum over Sobel responses, and the texture loss a
squared-L2 sum. All functions accept torch tensors (gradients flow) or
numpy arrays (a float-convertible scalar tensor is returned).
"""

from __future__ import annotations

import math
import warnings

import numpy as np
import torch

from ..errors import NumericError, ValidationError

ENTROPY_MAX_DIMS = 16
ENTROPY_REG = 1e-6


def _t(x):
    if torch.is_tensor(x):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def _sobel_kernels(ndim, dtype, device):
    smooth = torch.tensor([1.0, 2.0, 1.0], dtype=dtype, device=device)
    deriv = torch.tensor([-1.0, 0.0, 1.0], dtype=dtype, device=device)
    kernels = []
    for axis in range(ndim):
        k = torch.ones((), dtype=dtype, device=device)
        for a in range(ndim):
            v = deriv if a == axis else smooth
            k = k[..., None] * v.reshape((1,) * k.ndim + (3,))
        kernels.append(k.reshape((3,) * ndim))
    return kernels


def sobel(x):
    """Per-channel Sobel gradients.

    (B, C, H, W) -> (B, 2C, H, W) with derivative-along-rows then -columns
    channels; (B, C, D, H, W) -> (B, 3C, ...). Replicate padding at the
    border, so a constant image has an exactly zero response everywhere.
    """
    x = _t(x)
    ndim = x.ndim - 2
    if ndim not in (2, 3):
        raise ValidationError("sobel expects (B, C, spatial...) input, 2D or 3D")
    kernels = _sobel_kernels(ndim, x.dtype, x.device)
    conv = torch.nn.functional.conv2d if ndim == 2 else torch.nn.functional.conv3d
    c = x.shape[1]
    padded = torch.nn.functional.pad(x, (1, 1) * ndim, mode="replicate")
    outs = []
    for k in kernels:
        weight = k[None, None].repeat(c, 1, *(1,) * ndim)
        outs.append(conv(padded, weight, groups=c))
    return torch.cat(outs, dim=1)


def gaussian_entropy(x_ti, x1, max_dims=ENTROPY_MAX_DIMS, reg=ENTROPY_REG):
    """Gaussian-approximation entropy of the joint minibatch distribution.

    Concatenates flattened (x_ti, x1) per sample, projects onto at most
    `max_dims` principal directions, and returns the entropy of the Gaussian
    with the regularized empirical covariance of the projection.
    """
    x_ti, x1 = _t(x_ti), _t(x1)
    b = x_ti.shape[0]
    if b < 2:
        raise ValidationError("entropy estimate needs batch size >= 2")
    z = torch.cat([x_ti.reshape(b, -1), x1.reshape(b, -1)], dim=1)
    if not torch.isfinite(z).all():
        raise NumericError("non-finite values in entropy estimator input")
    zc = z - z.mean(dim=0, keepdim=True)
    k = min(max_dims, b - 1, zc.shape[1])
    if zc.shape[1] > k:
        # the projection basis is held fixed (no gradient through the SVD,
        # whose backward pass is unstable for near-degenerate spectra)
        _, _, vh = torch.linalg.svd(zc.detach(), full_matrices=False)
        proj = zc @ vh[:k].T
    else:
        proj = zc
        k = zc.shape[1]
    cov = proj.T @ proj / (b - 1) + reg * torch.eye(k, dtype=proj.dtype, device=proj.device)
    _, logdet = torch.linalg.slogdet(cov)
    return 0.5 * (k * math.log(2 * math.pi * math.e) + logdet)


def sb_loss(x_ti, x1_pred, t_i, sigma, use_entropy=True):
    """Bridge-consistency loss for one modality branch.

    Mean squared difference between the state at t_i and the terminal
    prediction, minus 2*sigma*(1 - t_i) times the minibatch entropy
    estimate. With batch size < 2 the entropy term is skipped (warning).
    """
    x_ti, x1_pred = _t(x_ti), _t(x1_pred)
    if x_ti.shape != x1_pred.shape:
        raise ValidationError(f"shape mismatch {x_ti.shape} vs {x1_pred.shape}")
    loss = ((x1_pred - x_ti) ** 2).mean()
    coeff = 2.0 * sigma * (1.0 - t_i)
    if use_entropy and coeff != 0.0:
        if x_ti.shape[0] < 2:
            warnings.warn("batch size < 2: entropy term skipped")
        else:
            loss = loss - coeff * gaussian_entropy(x_ti, x1_pred)
    return loss


def boundary_loss(f0d_mr, f1d_mr, f0d_us, f1d_us, proj3):
    """Deep-tap boundary preservation: L1 between Sobel responses of the
    3x3-projected deep features of the input and of the translated image,
    averaged over the two modalities."""
    terms = []
    for f0, f1 in ((f0d_mr, f1d_mr), (f0d_us, f1d_us)):
        f0, f1 = _t(f0), _t(f1)
        if f0.shape != f1.shape:
            raise ValidationError(f"tap shape mismatch {f0.shape} vs {f1.shape}")
        terms.append((sobel(proj3(f1)) - sobel(proj3(f0))).abs().sum())
    return (terms[0] + terms[1]) / 2.0


def texture_loss(f1s_mr, f1s_us, proj7):
    """Shallow-tap texture consistency: squared L2 norm of the difference of
    the 7x7-projected shallow features of the two translated images."""
    a, b = _t(f1s_mr), _t(f1s_us)
    if a.shape != b.shape:
        raise ValidationError(f"tap shape mismatch {a.shape} vs {b.shape}")
    return ((proj7(a) - proj7(b)) ** 2).sum()
