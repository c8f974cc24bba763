"""Evaluation metrics: mask overlap, surface distance, field smoothness, and
feature-distribution distances.

Conventions documented here because the degenerate cases are not obvious:
  * dsc/iou of two empty masks is defined as 1.0.
  * The mask surface is the set of mask voxels with at least one
    six-connected background neighbor; ASD is the symmetric average of the
    two directed mean surface distances, voxel-center to voxel-center.
  * harmonic_energy uses the 6-point discrete Laplacian on interior voxels.
  * The FID/KID feature extractor is pluggable; the default is a fixed
    seeded random projection of block-downsampled images to 64 dims, which
    makes distances comparable within one extractor but not against
    published numbers.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg, ndimage

from .errors import ConfigError, ValidationError
from .types import DeformationField

FID_REG = 1e-6


def _as_mask(a):
    arr = np.asarray(a)
    if arr.dtype != bool:
        uniq = np.unique(arr)
        if not np.all(np.isin(uniq, (0, 1))):
            raise ValidationError("mask must be strictly binary")
        arr = arr.astype(bool)
    return arr


def dsc(a, b) -> float:
    """Dice similarity 2|X∩Y|/(|X|+|Y|); both-empty convention: 1.0."""
    a, b = _as_mask(a), _as_mask(b)
    if a.shape != b.shape:
        raise ValidationError("mask dims disagree")
    sa, sb = int(a.sum()), int(b.sum())
    if sa == 0 and sb == 0:
        return 1.0
    return 2.0 * float(np.logical_and(a, b).sum()) / (sa + sb)


def iou(a, b) -> float:
    """Intersection over union; both-empty convention: 1.0."""
    a, b = _as_mask(a), _as_mask(b)
    if a.shape != b.shape:
        raise ValidationError("mask dims disagree")
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum()) / union


def surface_voxels(mask):
    """Mask voxels with at least one six-connected background neighbor."""
    mask = _as_mask(mask)
    structure = ndimage.generate_binary_structure(mask.ndim, 1)
    eroded = ndimage.binary_erosion(mask, structure=structure, border_value=0)
    return mask & ~eroded


def asd(a, b) -> float:
    """Symmetric average surface distance in voxels."""
    a, b = _as_mask(a), _as_mask(b)
    if a.shape != b.shape:
        raise ValidationError("mask dims disagree")
    if not a.any() or not b.any():
        raise ValidationError("asd requires two nonempty masks")
    sa, sb = surface_voxels(a), surface_voxels(b)
    # distance to the nearest surface voxel of the other mask
    d_to_b = ndimage.distance_transform_edt(~sb)
    d_to_a = ndimage.distance_transform_edt(~sa)
    return 0.5 * (float(d_to_b[sa].mean()) + float(d_to_a[sb].mean()))


def harmonic_energy(phi: DeformationField | np.ndarray) -> float:
    """Sum over components of the squared 6-point Laplacian, interior only."""
    disp = phi.disp if isinstance(phi, DeformationField) else np.asarray(phi)
    if disp.ndim != 4 or disp.shape[0] != 3:
        raise ValidationError("expected (3, X, Y, Z) field")
    if any(s < 3 for s in disp.shape[1:]):
        raise ValidationError("field dims must each be >= 3")
    total = 0.0
    for c in range(3):
        f = disp[c].astype(np.float64)
        lap = (
            f[2:, 1:-1, 1:-1] + f[:-2, 1:-1, 1:-1]
            + f[1:-1, 2:, 1:-1] + f[1:-1, :-2, 1:-1]
            + f[1:-1, 1:-1, 2:] + f[1:-1, 1:-1, :-2]
            - 6.0 * f[1:-1, 1:-1, 1:-1]
        )
        total += float((lap**2).sum())
    return total


def _check_features(f, name):
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2:
        raise ValidationError(f"{name} must be an n x d matrix")
    if not np.all(np.isfinite(f)):
        raise ValidationError(f"{name} contains non-finite entries")
    if f.shape[0] < 2:
        raise ValidationError(f"{name} needs n >= 2 samples")
    return f


def fid(fa, fb) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^{1/2}) with symmetric-PSD
    square root; covariances regularized by +1e-6 I.
    """
    fa = _check_features(fa, "fa")
    fb = _check_features(fb, "fb")
    if fa.shape[1] != fb.shape[1]:
        raise ValidationError("feature dimensions disagree")
    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    d = fa.shape[1]
    sa = np.cov(fa, rowvar=False).reshape(d, d) + FID_REG * np.eye(d)
    sb = np.cov(fb, rowvar=False).reshape(d, d) + FID_REG * np.eye(d)
    covmean = linalg.sqrtm(sa @ sb)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    val = float(((mu_a - mu_b) ** 2).sum() + np.trace(sa + sb - 2.0 * covmean))
    return max(val, 0.0)


def _poly_kernel(x, y):
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** 3


def kid(fa, fb) -> float:
    """Unbiased polynomial-kernel MMD^2 with k(x,y) = (x.y/d + 1)^3."""
    fa = _check_features(fa, "fa")
    fb = _check_features(fb, "fb")
    if fa.shape[1] != fb.shape[1]:
        raise ValidationError("feature dimensions disagree")
    m, n = fa.shape[0], fb.shape[0]
    kxx = _poly_kernel(fa, fa)
    kyy = _poly_kernel(fb, fb)
    kxy = _poly_kernel(fa, fb)
    term_x = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    term_y = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(term_x + term_y - 2.0 * kxy.mean())


def _block_downsample(img, out_size=16):
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    ys = np.linspace(0, h, out_size + 1).astype(int)
    xs = np.linspace(0, w, out_size + 1).astype(int)
    out = np.empty((out_size, out_size))
    for i in range(out_size):
        for j in range(out_size):
            out[i, j] = img[ys[i]:ys[i + 1], xs[j]:xs[j + 1]].mean()
    return out


def random_projection_features(images, d=64, seed=0) -> np.ndarray:
    """Default extractor: block-downsample to 16x16, project with a fixed
    seeded Gaussian matrix to d dims."""
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal((256, d)) / np.sqrt(256)
    feats = [np.asarray(_block_downsample(img)).ravel() @ proj for img in images]
    return np.asarray(feats)


_EXTRACTORS = {"random_projection": random_projection_features}


def register_extractor(name, fn):
    _EXTRACTORS[name] = fn


def get_extractor(name):
    try:
        return _EXTRACTORS[name]
    except KeyError:
        raise ConfigError(
            f"unknown feature extractor {name!r}; available: {sorted(_EXTRACTORS)}"
        ) from None
