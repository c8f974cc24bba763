"""Core data containers shared by all pipeline stages.

Conventions:
  * Volumes are numpy arrays of shape (X, Y, Z), indexed voxels[x, y, z].
  * The probe sweep axis is Z. Sagittal frames are (X, window-along-Z)
    patches of the mid-Y plane; transverse frames are (X, Y) slices.
  * Frame pixel coordinates are (x, y) = (column, row), so a match point
    p = (x, y) addresses pixels[y, x].
  * Deformation fields store per-voxel displacements in voxel units with
    shape (3, X, Y, Z), components ordered (dx, dy, dz).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

SAGITTAL = "sagittal"
TRANSVERSE = "transverse"


@dataclass
class Volume:
    """3D scalar grid with voxel spacing and an optional validity mask."""

    voxels: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    validity: np.ndarray | None = None

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float32)
        if self.voxels.ndim != 3:
            raise ValidationError(f"volume must be 3D, got shape {self.voxels.shape}")
        if not np.all(np.isfinite(self.voxels)):
            raise ValidationError("volume contains non-finite voxels")
        if self.validity is not None:
            self.validity = np.asarray(self.validity, dtype=bool)
            if self.validity.shape != self.voxels.shape:
                raise ValidationError("validity shape does not match voxels")

    @property
    def dims(self) -> tuple:
        return self.voxels.shape

    def copy(self) -> "Volume":
        return Volume(
            self.voxels.copy(),
            tuple(self.spacing),
            None if self.validity is None else self.validity.copy(),
        )


@dataclass
class Frame2D:
    """One grayscale 2D frame with view tag and acquisition index."""

    pixels: np.ndarray
    view: str
    index: int
    validity: np.ndarray | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 2:
            raise ValidationError("frame pixels must be 2D")
        h, w = self.pixels.shape
        if h < 8 or w < 8:
            raise ValidationError(f"frame too small: {h}x{w}, need >= 8 per side")
        if self.view not in (SAGITTAL, TRANSVERSE):
            raise ValidationError(f"unknown view {self.view!r}")
        if self.validity is not None:
            self.validity = np.asarray(self.validity, dtype=bool)
            if self.validity.shape != self.pixels.shape:
                raise ValidationError("frame validity shape mismatch")
            if not self.validity.any():
                raise ValidationError("frame validity mask is empty")

    @property
    def shape(self) -> tuple:
        return self.pixels.shape


@dataclass
class MatchSet:
    """Candidate keypoint correspondences between two frames."""

    pairs: list  # [(p_src=(x, y), p_dst=(x, y)), ...]
    scores: list

    def __len__(self):
        return len(self.pairs)

    def displacements(self) -> np.ndarray:
        """(n, 2) array of p_dst - p_src."""
        if not self.pairs:
            return np.zeros((0, 2))
        src = np.array([p for p, _ in self.pairs], dtype=float)
        dst = np.array([q for _, q in self.pairs], dtype=float)
        return dst - src


@dataclass
class ConsensusResult:
    """Largest-cluster inliers of a MatchSet with their mean displacement."""

    inliers: list
    mean_displacement: tuple
    cluster_size: int
    rejected: int


@dataclass
class DeformationField:
    """Per-voxel 3-vector displacement in voxel units, shape (3, X, Y, Z)."""

    disp: np.ndarray

    def __post_init__(self):
        self.disp = np.asarray(self.disp, dtype=np.float32)
        if self.disp.ndim != 4 or self.disp.shape[0] != 3:
            raise ValidationError(
                f"deformation field must have shape (3, X, Y, Z), got {self.disp.shape}"
            )
        if not np.all(np.isfinite(self.disp)):
            raise ValidationError("deformation field contains non-finite values")

    @property
    def dims(self) -> tuple:
        return self.disp.shape[1:]

    def max_norm(self) -> float:
        return float(np.sqrt((self.disp.astype(np.float64) ** 2).sum(axis=0)).max())


@dataclass
class GroundTruth:
    """Phantom oracle: true mask, true frame positions, optional true field."""

    prostate_mask: Volume
    frame_positions: list = field(default_factory=list)  # [(index, offset_voxels)]
    true_field: DeformationField | None = None
