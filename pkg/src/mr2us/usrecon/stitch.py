"""Stitch-then-localize: build the sagittal composite and localize frames.

Each incoming sagittal frame is matched against the growing composite (not
just the previous frame), so one bad frame does not mislocalize the rest of
the sweep. Blending uses feathered weights (distance to frame edge) so the
seam quality of the composite directly reflects localization quality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NoConsensusError, ReconstructionOrderError, ValidationError
from ..types import Frame2D, MatchSet
from .clustering import consensus_filter
from .matching import get_matcher

DEFAULT_EPS = 1.5
DEFAULT_MIN_PTS = 5


def _feather_weights(h, w):
    """Linear distance-to-edge weights, minimum 1 at the frame border."""
    rows = np.minimum(np.arange(h), np.arange(h)[::-1]).astype(float) + 1.0
    cols = np.minimum(np.arange(w), np.arange(w)[::-1]).astype(float) + 1.0
    return np.minimum(rows[:, None], cols[None, :])


@dataclass
class StitchState:
    """Growing composite with weight map and per-frame offsets.

    `origin` is the world coordinate (x, y) of composite pixel (0, 0);
    frame offsets are world coordinates with the first frame at (0, 0).
    """

    accum: np.ndarray | None = None
    weight: np.ndarray | None = None
    origin: tuple = (0.0, 0.0)
    frame_offsets: list = field(default_factory=list)
    reports: list = field(default_factory=list)  # per-frame localization info

    @property
    def empty(self) -> bool:
        return self.accum is None

    def composite(self) -> np.ndarray:
        out = np.zeros_like(self.accum)
        np.divide(self.accum, self.weight, out=out, where=self.weight > 0)
        return out


def _blend(state: StitchState, pixels, world_x, world_y):
    """Accumulate a frame into the composite at its (rounded) world offset."""
    h, w = pixels.shape
    px = int(np.floor(world_x - state.origin[0] + 0.5))
    py = int(np.floor(world_y - state.origin[1] + 0.5))

    ch, cw = state.accum.shape
    pad_top = max(0, -py)
    pad_left = max(0, -px)
    pad_bottom = max(0, py + h - ch)
    pad_right = max(0, px + w - cw)
    if pad_top or pad_left or pad_bottom or pad_right:
        state.accum = np.pad(state.accum, ((pad_top, pad_bottom), (pad_left, pad_right)))
        state.weight = np.pad(state.weight, ((pad_top, pad_bottom), (pad_left, pad_right)))
        state.origin = (state.origin[0] - pad_left, state.origin[1] - pad_top)
        px += pad_left
        py += pad_top

    fw = _feather_weights(h, w)
    state.accum[py : py + h, px : px + w] += pixels * fw
    state.weight[py : py + h, px : px + w] += fw


def stitch_next(state: StitchState, frame: Frame2D, matcher="corner",
                eps: float = DEFAULT_EPS, min_pts: int = DEFAULT_MIN_PTS):
    """Localize one frame against the composite and blend it in.

    Returns (state, frame_offset). The first frame initializes the state at
    offset (0, 0). Raises NoConsensusError when no displacement consensus
    exists (empty match set included).
    """
    if state.empty:
        state.accum = frame.pixels.astype(np.float64) * _feather_weights(*frame.shape)
        state.weight = _feather_weights(*frame.shape)
        state.origin = (0.0, 0.0)
        state.frame_offsets.append((0.0, 0.0))
        state.reports.append({"index": frame.index, "offset": [0.0, 0.0],
                              "inliers": 0, "consensus": [0.0, 0.0],
                              "skipped": False})
        return state, (0.0, 0.0)

    match_fn = matcher if callable(matcher) else get_matcher(matcher)
    composite = Frame2D(state.composite().astype(np.float32), frame.view, -1,
                        validity=state.weight > 0)
    matches: MatchSet = match_fn(frame, composite)
    if len(matches) == 0:
        raise NoConsensusError(f"no matches for frame {frame.index}")
    cons = consensus_filter(matches, eps, min_pts)
    offset = (state.origin[0] + cons.mean_displacement[0],
              state.origin[1] + cons.mean_displacement[1])
    _blend(state, frame.pixels.astype(np.float64), offset[0], offset[1])
    state.frame_offsets.append(offset)
    state.reports.append({"index": frame.index, "offset": list(offset),
                          "inliers": cons.cluster_size,
                          "consensus": list(cons.mean_displacement),
                          "skipped": False})
    return state, offset


def stitch_sweep(frames, matcher="corner", eps: float = DEFAULT_EPS,
                 min_pts: int = DEFAULT_MIN_PTS, policy: str = "abort"):
    """Stitch an ordered list of sagittal frames.

    policy: "abort" re-raises NoConsensusError (default: mislocalization
    propagates); "skip" records None for the failed frame and continues.
    Returns (state, offsets) with offsets[i] = (x, y) or None.
    """
    if policy not in ("abort", "skip"):
        raise ValidationError(f"unknown no-consensus policy {policy!r}")
    state = StitchState()
    offsets = []
    for frame in frames:
        try:
            _, off = stitch_next(state, frame, matcher, eps, min_pts)
        except NoConsensusError:
            if policy == "abort":
                raise
            offsets.append(None)
            # keep frame_offsets aligned with acquisition indices
            state.frame_offsets.append(None)
            state.reports.append({"index": frame.index, "offset": None,
                                  "inliers": 0, "consensus": None,
                                  "skipped": True})
            continue
        offsets.append(off)
    return state, offsets


def transfer_positions(frame_offsets, sweep_axis: int = 0):
    """Transfer sagittal offsets to transverse z positions (nearest plane).

    `frame_offsets` holds per-frame (x, y) world offsets (None for skipped
    frames); the component along `sweep_axis` becomes the transverse frame's
    out-of-plane position. Backward motion beyond 1 voxel after rounding
    raises ReconstructionOrderError; 1-voxel dips are clamped monotone.
    """
    positions = []
    prev = None
    for off in frame_offsets:
        if off is None:
            positions.append(None)
            continue
        z = int(np.floor(off[sweep_axis] + 0.5))
        if prev is not None and z < prev:
            if prev - z > 1:
                raise ReconstructionOrderError(
                    f"frame position moves backwards: {prev} -> {z}"
                )
            z = prev
        positions.append(z)
        prev = z
    return positions
