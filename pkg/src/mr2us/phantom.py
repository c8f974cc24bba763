"""Synthetic paired MR/US prostate phantoms with known ground truth.

The phantom is a textured ellipsoid ("prostate") inside a homogeneous
background. Both modalities share the exact same ellipsoid mask; they differ
the way real MR and US differ for registration purposes:

  * MR: smooth correlated internal texture, thin bright boundary rim.
  * US: multiplicative Rayleigh-like speckle, thicker bright rim.

All randomness flows through explicit numpy Generators, so every output is
bit-reproducible under a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .types import SAGITTAL, TRANSVERSE, DeformationField, Frame2D, GroundTruth, Volume

# Base intensities chosen so the prostate interior is the darkest tissue
# (the anatomy-aware registration loss relies on dark interior / bright rim).
MR_BACKGROUND = 0.45
MR_INTERIOR = 0.15
MR_RIM = 0.90
US_BACKGROUND = 0.50
US_INTERIOR = 0.20
US_RIM = 0.95

FAN_HALF_ANGLE_DEG = 45.0


@dataclass
class PhantomSpec:
    """Parameters of one synthetic MR/US pair."""

    seed: int
    dims: tuple = (64, 64, 64)
    prostate_axes: tuple = (18.0, 15.0, 16.0)
    mr_boundary_px: float = 1.0
    us_boundary_px: float = 2.0
    speckle_strength: float = 0.3
    texture_scale: float = 4.0

    def validate(self):
        if len(self.dims) != 3 or any(d < 16 for d in self.dims):
            raise ValidationError(f"phantom dims must each be >= 16, got {self.dims}")
        center = [(d - 1) / 2.0 for d in self.dims]
        for ax, c, d in zip(self.prostate_axes, center, self.dims):
            if ax <= 0:
                raise ValidationError("prostate axes must be positive")
            # ellipsoid must fit strictly inside with >= 2 voxel margin
            if ax + 2.0 > min(c, (d - 1) - c):
                raise ValidationError(
                    f"prostate axis {ax} exceeds margin for dim {d} (need 2-voxel rim)"
                )
        if self.us_boundary_px < self.mr_boundary_px:
            raise ValidationError("us_boundary_px must be >= mr_boundary_px")
        if not 0.0 <= self.speckle_strength <= 1.0:
            raise ValidationError("speckle_strength must be in [0, 1]")
        if self.texture_scale <= 0:
            raise ValidationError("texture_scale must be positive")


def _ellipsoid_mask(dims, axes):
    center = [(d - 1) / 2.0 for d in dims]
    grids = np.ogrid[0 : dims[0], 0 : dims[1], 0 : dims[2]]
    rho2 = sum(((g - c) / a) ** 2 for g, c, a in zip(grids, center, axes))
    return rho2 <= 1.0


def _boundary_distance(mask):
    """Unsigned distance (voxels) to the mask surface, defined everywhere."""
    inside = ndimage.distance_transform_edt(mask)
    outside = ndimage.distance_transform_edt(~mask)
    return np.where(mask, inside, outside)


def _smooth_noise(rng, dims, scale):
    """Zero-mean unit-std correlated noise with correlation length ~scale."""
    raw = rng.standard_normal(dims)
    sm = ndimage.gaussian_filter(raw, sigma=scale)
    std = sm.std()
    if std > 0:
        sm = sm / std
    return sm


def _rayleigh_speckle(rng, dims):
    """Rayleigh draws normalized to unit mean."""
    s = rng.rayleigh(scale=1.0, size=dims)
    return s / np.sqrt(np.pi / 2.0)


def make_prostate_pair(spec: PhantomSpec):
    """Build the paired (mr, us, truth) phantom.

    Returns MR and US Volumes with voxel-identical prostate masks, values
    in [0, 1], plus the GroundTruth holding the binary mask.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    mask = _ellipsoid_mask(spec.dims, spec.prostate_axes)
    dist = _boundary_distance(mask)
    rim_mr = dist <= spec.mr_boundary_px / 2.0 + 0.5
    rim_us = dist <= spec.us_boundary_px / 2.0 + 0.5

    # MR: piecewise base + smooth texture inside the prostate, thin rim.
    tex = _smooth_noise(rng, spec.dims, spec.texture_scale)
    mr = np.full(spec.dims, MR_BACKGROUND, dtype=np.float64)
    mr[mask] = MR_INTERIOR
    mr[mask] += 0.05 * tex[mask]
    mr[rim_mr] = MR_RIM

    # US: piecewise base, thicker rim, multiplicative speckle everywhere.
    us = np.full(spec.dims, US_BACKGROUND, dtype=np.float64)
    us[mask] = US_INTERIOR
    us[rim_us] = US_RIM
    speckle = _rayleigh_speckle(rng, spec.dims)
    us = us * (1.0 + spec.speckle_strength * (speckle - 1.0))

    mr = np.clip(mr, 0.0, 1.0)
    us = np.clip(us, 0.0, 1.0)

    truth = GroundTruth(prostate_mask=Volume(mask.astype(np.float32)))
    return Volume(mr), Volume(us), truth


def fan_mask(height, width, half_angle_deg=FAN_HALF_ANGLE_DEG):
    """Circular-sector validity mask with apex at the top-center of the frame.

    Rows index depth from the probe tip; the sector opens downward with the
    given half angle and radius height - 1.
    """
    rows = np.arange(height)[:, None].astype(float)
    cols = np.arange(width)[None, :].astype(float) - (width - 1) / 2.0
    r = np.hypot(rows, cols)
    ang = np.degrees(np.arctan2(np.abs(cols), np.maximum(rows, 1e-9)))
    mask = (r <= height - 1) & (ang <= half_angle_deg)
    mask[0, :] = False
    mask[0, int(round((width - 1) / 2.0))] = True
    return mask


def _sample_window(vol_plane, start, width):
    """Columns [start, start + width) of a 2D plane, linear interp along z."""
    z = start + np.arange(width)
    z0 = np.floor(z).astype(int)
    frac = z - z0
    z0 = np.clip(z0, 0, vol_plane.shape[1] - 1)
    z1 = np.clip(z0 + 1, 0, vol_plane.shape[1] - 1)
    return vol_plane[:, z0] * (1 - frac) + vol_plane[:, z1] * frac


def _sample_slice(voxels, z):
    """Transverse (X, Y) slice at possibly fractional z, linear interp."""
    z0 = int(np.floor(z))
    frac = z - z0
    z0 = min(max(z0, 0), voxels.shape[2] - 1)
    z1 = min(z0 + 1, voxels.shape[2] - 1)
    return voxels[:, :, z0] * (1 - frac) + voxels[:, :, z1] * frac


def slice_sweep(us: Volume, step: float, jitter: float, rng, frame_width: int = 16):
    """Emit the bi-directional frame sweep of a US volume.

    At each station the probe produces a rectangular sagittal frame (a
    frame_width-wide window of the mid-Y sagittal plane) and a fan-masked
    transverse frame (the full X-Y slice at the station offset). Stations
    advance along Z by `step` voxels plus uniform jitter in [-jitter, jitter].

    Returns (frames, positions): frames ordered sagittal/transverse pairs per
    station, positions as [(station index, true offset in voxels)].
    """
    if step < 1:
        raise ValidationError(f"sweep step must be >= 1, got {step}")
    if jitter < 0:
        raise ValidationError("jitter must be >= 0")
    if step > frame_width / 2.0:
        raise ValidationError(
            f"step {step} > half frame width {frame_width / 2}: insufficient overlap"
        )
    X, Y, Z = us.dims
    if frame_width > Z:
        raise ValidationError("frame width exceeds volume depth")
    if jitter >= step / 2.0 and jitter > 0:
        raise ValidationError("jitter must be < step/2 to keep stations monotone")

    n_stations = int((Z - frame_width) // step) + 1
    offsets = []
    for k in range(n_stations):
        off = k * step
        if jitter > 0 and k > 0:
            off += rng.uniform(-jitter, jitter)
        offsets.append(float(min(max(off, 0.0), Z - frame_width)))
    if any(b <= a for a, b in zip(offsets, offsets[1:])):
        raise ValidationError("jittered station offsets are not strictly monotone")

    y_mid = Y // 2
    plane = us.voxels[:, y_mid, :]
    fan = fan_mask(X, Y)
    frames = []
    positions = []
    for k, off in enumerate(offsets):
        sag = _sample_window(plane, off, frame_width)
        frames.append(Frame2D(sag.astype(np.float32), SAGITTAL, k))
        trans = _sample_slice(us.voxels, off)
        frames.append(Frame2D(trans.astype(np.float32), TRANSVERSE, k, validity=fan.copy()))
        positions.append((k, off))
    return frames, positions


def _boundary_window(dims, margin=3.0):
    """Smooth scalar window that is 0 on the domain boundary, 1 in the interior."""
    w = np.ones(dims)
    for axis, d in enumerate(dims):
        coord = np.arange(d, dtype=float)
        ramp = np.minimum(coord, (d - 1) - coord) / margin
        ramp = np.clip(ramp, 0.0, 1.0)
        ramp = 0.5 - 0.5 * np.cos(np.pi * ramp)  # C1 ramp
        shape = [1, 1, 1]
        shape[axis] = d
        w = w * ramp.reshape(shape)
    return w


def make_deformation(dims, amplitude: float, smoothness: float, rng) -> DeformationField:
    """Gaussian-smoothed random displacement field.

    Max displacement norm equals `amplitude` (<= after clipping to zero at the
    boundary), and the field vanishes on the domain boundary.
    """
    if amplitude < 0:
        raise ValidationError("amplitude must be >= 0")
    if smoothness <= 0:
        raise ValidationError("smoothness must be > 0")
    disp = rng.standard_normal((3,) + tuple(dims))
    for c in range(3):
        disp[c] = ndimage.gaussian_filter(disp[c], sigma=smoothness)
    disp *= _boundary_window(dims)[None]
    norm = np.sqrt((disp**2).sum(axis=0))
    peak = norm.max()
    if peak > 0:
        disp *= amplitude / peak
    else:
        disp[:] = 0.0
    return DeformationField(disp)
