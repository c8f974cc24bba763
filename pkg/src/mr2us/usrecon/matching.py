"""Keypoint detection and matching between 2D frames.

The built-in matcher is dependency-free: Harris-style corner detection plus
normalized patch correlation with a cross-check. External matchers (SIFT,
ORB, LoFTR wrappers, ...) plug in through `register_matcher`.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..errors import ConfigError, ValidationError
from ..types import Frame2D, MatchSet

PATCH_RADIUS = 4
MAX_CORNERS = 600
MIN_SCORE = 0.7
HARRIS_K = 0.05


def harris_corners(img, validity=None, max_corners=MAX_CORNERS, border=PATCH_RADIUS):
    """(n, 2) array of corner coordinates (x, y), strongest first."""
    img = np.asarray(img, dtype=np.float64)
    ix = ndimage.sobel(img, axis=1, mode="reflect")
    iy = ndimage.sobel(img, axis=0, mode="reflect")
    sxx = ndimage.gaussian_filter(ix * ix, 1.0)
    syy = ndimage.gaussian_filter(iy * iy, 1.0)
    sxy = ndimage.gaussian_filter(ix * iy, 1.0)
    det = sxx * syy - sxy**2
    tr = sxx + syy
    r = det - HARRIS_K * tr**2

    rmax = r.max()
    if rmax <= 1e-12:
        return np.zeros((0, 2), dtype=int)
    local_max = r == ndimage.maximum_filter(r, size=3)
    cand = local_max & (r > 1e-4 * rmax)
    cand[:border, :] = False
    cand[-border:, :] = False
    cand[:, :border] = False
    cand[:, -border:] = False
    if validity is not None:
        # keep corners whose whole patch is inside the valid region
        core = ndimage.binary_erosion(validity, iterations=border)
        cand &= core
    ys, xs = np.nonzero(cand)
    if len(xs) == 0:
        return np.zeros((0, 2), dtype=int)
    order = np.argsort(r[ys, xs])[::-1][:max_corners]
    return np.stack([xs[order], ys[order]], axis=1)


def _descriptors(img, corners, radius=PATCH_RADIUS):
    """Zero-mean, unit-norm flattened patches around each corner."""
    img = np.asarray(img, dtype=np.float64)
    descs = np.zeros((len(corners), (2 * radius + 1) ** 2))
    for i, (x, y) in enumerate(corners):
        patch = img[y - radius : y + radius + 1, x - radius : x + radius + 1].ravel()
        patch = patch - patch.mean()
        n = np.linalg.norm(patch)
        descs[i] = patch / n if n > 1e-12 else patch
    return descs


def corner_ncc_matcher(a: Frame2D, b: Frame2D) -> MatchSet:
    """Harris corners + normalized patch correlation with cross-check."""
    ca = harris_corners(a.pixels, a.validity)
    cb = harris_corners(b.pixels, b.validity)
    if len(ca) == 0 or len(cb) == 0:
        return MatchSet([], [])
    da = _descriptors(a.pixels, ca)
    db = _descriptors(b.pixels, cb)
    sim = da @ db.T  # NCC since descriptors are unit-norm
    best_ab = sim.argmax(axis=1)
    best_ba = sim.argmax(axis=0)
    pairs, scores = [], []
    for i, j in enumerate(best_ab):
        if best_ba[j] != i:
            continue
        s = sim[i, j]
        if s < MIN_SCORE:
            continue
        pairs.append((tuple(map(float, ca[i])), tuple(map(float, cb[j]))))
        scores.append(float(s))
    return MatchSet(pairs, scores)


_MATCHERS = {"corner": corner_ncc_matcher}


def register_matcher(name, fn):
    _MATCHERS[name] = fn


def available_matchers():
    return sorted(_MATCHERS)


def get_matcher(name):
    try:
        return _MATCHERS[name]
    except KeyError:
        raise ConfigError(
            f"unknown matcher {name!r}; available: {available_matchers()}"
        ) from None


def match_features(a: Frame2D, b: Frame2D, matcher: str = "corner") -> MatchSet:
    """Candidate correspondences from frame `a` to frame `b`."""
    if a.view != b.view:
        raise ValidationError(f"cannot match {a.view} frame against {b.view} frame")
    return get_matcher(matcher)(a, b)
