"""File formats: RVOL1 volumes/fields and frame directories.

Volume format: `<name>.json` header
  {"magic": "RVOL1", "dims": [X, Y, Z], "spacing": [sx, sy, sz],
   "dtype": "f32le", "order": "x-fastest", "components": C}
plus `<name>.raw` holding C*X*Y*Z little-endian float32 values with
index = ((c*Z + z)*Y + y)*X + x. Deformation fields use C = 3.

Frame format: a directory with `manifest.json` (ordered entries: file,
view, index, optional validity file) and one 16-bit grayscale PNG per
frame (plus one per validity mask).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError
from .types import DeformationField, Frame2D, Volume

MAGIC = "RVOL1"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _base(path) -> Path:
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p


def write_volume(path, vol) -> list:
    """Write a Volume (C=1) or DeformationField (C=3); returns written paths."""
    base = _base(path)
    if isinstance(vol, DeformationField):
        data = vol.disp.astype(np.float32)
        spacing = (1.0, 1.0, 1.0)
    elif isinstance(vol, Volume):
        data = vol.voxels.astype(np.float32)[None]
        spacing = vol.spacing
    else:
        raise ValidationError(f"cannot write object of type {type(vol).__name__}")
    c = data.shape[0]
    x, y, z = data.shape[1:]
    header = {
        "magic": MAGIC,
        "dims": [x, y, z],
        "spacing": [float(s) for s in spacing],
        "dtype": "f32le",
        "order": "x-fastest",
        "components": c,
    }
    raw = np.ascontiguousarray(data.transpose(0, 3, 2, 1)).astype("<f4")
    base.parent.mkdir(parents=True, exist_ok=True)
    json_path = base.with_suffix(".json")
    raw_path = base.with_suffix(".raw")
    json_path.write_text(json.dumps(header, indent=2) + "\n")
    raw_path.write_bytes(raw.tobytes())
    return [json_path, raw_path]


def read_volume(path):
    """Read `<name>.json`/`.raw`; returns Volume (C=1) or DeformationField (C=3)."""
    base = _base(path)
    json_path = base.with_suffix(".json")
    if not json_path.exists():
        raise ValidationError(f"missing volume header {json_path}")
    header = json.loads(json_path.read_text())
    if header.get("magic") != MAGIC:
        raise ValidationError(f"{json_path}: bad magic {header.get('magic')!r}")
    x, y, z = header["dims"]
    c = header.get("components", 1)
    raw = np.fromfile(base.with_suffix(".raw"), dtype="<f4")
    if raw.size != c * x * y * z:
        raise ValidationError(
            f"{base}.raw holds {raw.size} values, expected {c * x * y * z}"
        )
    data = raw.reshape(c, z, y, x).transpose(0, 3, 2, 1)
    if c == 1:
        return Volume(data[0], tuple(header["spacing"]))
    if c == 3:
        return DeformationField(data)
    raise ValidationError(f"unsupported component count {c}")


def _write_png16(path, arr):
    img = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    data = np.round(img * 65535.0).astype(np.uint16)
    Image.fromarray(data).save(path)


def _read_png16(path):
    arr = np.asarray(Image.open(path), dtype=np.float64)
    return (arr / 65535.0).astype(np.float32)


def write_frames(directory, frames) -> list:
    """Write a frame directory; returns written paths (manifest first)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    written = []
    for i, frame in enumerate(frames):
        name = f"frame_{i:04d}_{frame.view}.png"
        _write_png16(directory / name, frame.pixels)
        written.append(directory / name)
        entry = {"file": name, "view": frame.view, "index": frame.index}
        if frame.validity is not None:
            vname = f"frame_{i:04d}_{frame.view}_validity.png"
            _write_png16(directory / vname, frame.validity.astype(np.float64))
            written.append(directory / vname)
            entry["validity"] = vname
        entries.append(entry)
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps({"frames": entries}, indent=2) + "\n")
    return [manifest] + written


def read_frames(directory) -> list:
    """Read a frame directory back into Frame2D objects (manifest order)."""
    directory = Path(directory)
    manifest = directory / "manifest.json"
    if not manifest.exists():
        raise ValidationError(f"missing frame manifest {manifest}")
    entries = json.loads(manifest.read_text())["frames"]
    frames = []
    for entry in entries:
        pixels = _read_png16(directory / entry["file"])
        validity = None
        if "validity" in entry:
            validity = _read_png16(directory / entry["validity"]) > 0.5
        frames.append(Frame2D(pixels, entry["view"], entry["index"], validity))
    return frames
