"""Run configuration: embedded defaults, JSON loading, and hashing."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .errors import ValidationError

DEFAULT_CONFIG = {
    "seed": 0,
    "phantom": {
        "dims": [64, 64, 64],
        "prostate_axes": [18.0, 15.0, 16.0],
        "mr_boundary_px": 1.0,
        "us_boundary_px": 2.0,
        "speckle_strength": 0.2,
        "texture_scale": 4.0,
        "sweep": {"step": 2, "jitter": 0.0, "frame_width": 32},
        "deformation": {"amplitude": 0.0, "smoothness": 8.0},
    },
    "reconstruct": {
        "frames": None,          # frame directory (required)
        "matcher": "corner",
        "eps": 1.5,
        "min_pts": 5,
        "dims": None,            # [X, Y, Z]; inferred from frames when null
        "inpaint": "interp",
        "dip": {"iters": 2000, "lr": 0.01},
        "policy": "abort",
    },
    "translate": {
        "mr_volumes": [],        # training inputs
        "us_volumes": [],
        "input": None,           # inference input volume
        "output": "translated",
        "checkpoint": None,      # trained translator checkpoint (inference)
        "times": [0.0, 0.25, 0.5, 0.75, 1.0],
        "sigma": 0.01,
        "weights": {"sb": 1.0, "boundary": 1.0, "texture": 0.5},
        "net": {"base": 16, "levels": 3, "shallow_level": 0, "deep_level": None},
        "steps": 200,
        "lr": 1e-3,
        "batch": 4,
        "entropy": True,
        "augment": True,
        "mode": "slice2d",
    },
    "register": {
        "moving_t": None,        # translated moving volume
        "fixed_t": None,         # translated fixed volume
        "moving": None,          # original moving volume (inference)
        "fixed": None,           # original fixed volume (inference)
        "checkpoint": None,      # trained registration checkpoint (inference)
        "weights": {"sim": 1.0, "smooth": 0.1, "diff": 0.5},
        "noise_level": 0.1,
        "net": {"base": 8, "levels": 3, "guidance": True},
        "steps": 200,
        "lr": 1e-3,
        "augment": True,
        "resample_dims": None,   # e.g. [128, 128, 64]; null keeps input dims
    },
    "evaluate": {
        "mask_a": None,
        "mask_b": None,
        "field": None,
        "volume_a": None,
        "volume_b": None,
        "extractor": "random_projection",
        "montage": False,
        "checker_tiles": 4,
    },
    "crop_margin": 8,            # voxels kept around the prostate when cropping
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in out:
            raise ValidationError(f"unknown config key {key!r}")
        if isinstance(out[key], dict) and isinstance(val, dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path=None, overrides=None) -> dict:
    """Defaults merged with the JSON file at `path`, then with overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ValidationError(f"config file {p} does not exist")
        cfg = _merge(cfg, json.loads(p.read_text()))
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
