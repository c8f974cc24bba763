"""Command-line pipeline orchestration.

Subcommands: phantom, reconstruct, translate-train, translate,
register-train, register, evaluate. Every command reads one JSON config
(defaults embedded), writes its outputs plus a run manifest with content
checksums into --out, and holds a lock file for the duration of the run.

Exit codes: 0 success, 2 validation/config, 3 no-consensus or
reconstruction-order failure, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy import ndimage

from . import __version__
from .acmt import (
    AcmtLossWeights,
    BridgeSchedule,
    TranslatorNet,
    translate,
    train_step as acmt_train_step,
)
from .acmt.train import load_checkpoint as load_acmt_checkpoint
from .acmt.train import save_checkpoint as save_acmt_checkpoint
from .anareg import RegLossWeights, RegNet, register
from .anareg.train import load_checkpoint as load_reg_checkpoint
from .anareg.train import save_checkpoint as save_reg_checkpoint
from .anareg.train import train_step as reg_train_step
from .anareg.warp import spatial_transform
from .config import config_hash, load_config
from .errors import ConfigError, Mr2usError, ValidationError
from .io import read_frames, read_volume, sha256_file, write_frames, write_volume
from .metrics import asd, dsc, get_extractor, harmonic_energy, iou, kid
from .metrics import fid as fid_metric
from .phantom import PhantomSpec, make_deformation, make_prostate_pair, slice_sweep
from .types import DeformationField, Volume, SAGITTAL, TRANSVERSE
from .usrecon import (
    assemble_sparse_volume,
    dip_inpaint,
    interp_inpaint,
    stitch_sweep,
    transfer_positions,
)

LOCK_NAME = ".mr2us.lock"


def _require(value, name):
    if value is None:
        raise ValidationError(f"config field {name!r} is required for this command")
    return value


def _require_volume(path, name):
    p = Path(_require(path, name))
    if not p.with_suffix(".json").exists() and not p.exists():
        raise ValidationError(f"{name}: volume {p} does not exist")
    return read_volume(p)


class _RunDir:
    """Output directory with an exclusive lock file."""

    def __init__(self, out):
        self.path = Path(out)
        self.lock = self.path / LOCK_NAME

    def __enter__(self):
        self.path.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ValidationError(
                f"run directory {self.path} is locked by another run "
                f"(remove {self.lock} if stale)"
            )
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self.path

    def __exit__(self, *exc):
        self.lock.unlink(missing_ok=True)
        return False


def _write_manifest(out: Path, cfg, seed, outputs, started):
    manifest = {
        "config_hash": config_hash(cfg),
        "config": cfg,
        "seed": seed,
        "software_version": __version__,
        "started": started,
        "finished": time.time(),
        "outputs": {
            str(Path(p).relative_to(out)): sha256_file(p) for p in outputs
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _resample(vol: Volume, dims) -> Volume:
    factors = [t / s for t, s in zip(dims, vol.dims)]
    out = ndimage.zoom(vol.voxels.astype(np.float64), factors, order=1)
    # zoom can be off by one voxel on awkward ratios
    out = out[: dims[0], : dims[1], : dims[2]]
    pads = [(0, d - s) for d, s in zip(dims, out.shape)]
    out = np.pad(out, pads, mode="edge")
    return Volume(out.astype(np.float32), vol.spacing)


# ---------------------------------------------------------------- commands

def cmd_phantom(cfg, out: Path, seed: int):
    p = cfg["phantom"]
    spec = PhantomSpec(
        seed=seed,
        dims=tuple(p["dims"]),
        prostate_axes=tuple(p["prostate_axes"]),
        mr_boundary_px=p["mr_boundary_px"],
        us_boundary_px=p["us_boundary_px"],
        speckle_strength=p["speckle_strength"],
        texture_scale=p["texture_scale"],
    )
    mr, us, truth = make_prostate_pair(spec)
    rng = np.random.default_rng(seed + 1)
    frames, positions = slice_sweep(
        us, p["sweep"]["step"], p["sweep"]["jitter"], rng,
        frame_width=p["sweep"]["frame_width"],
    )
    outputs = []
    outputs += write_volume(out / "mr", mr)
    outputs += write_volume(out / "us", us)
    outputs += write_volume(out / "mask", truth.prostate_mask)
    outputs += write_frames(out / "frames", frames)
    truth_doc = {"frame_positions": [[k, o] for k, o in positions]}

    amp = p["deformation"]["amplitude"]
    if amp > 0:
        field = make_deformation(spec.dims, amp, p["deformation"]["smoothness"],
                                 np.random.default_rng(seed + 2))
        mr_moving = spatial_transform(mr, field, "trilinear")
        mask_moving = spatial_transform(truth.prostate_mask, field, "nearest")
        outputs += write_volume(out / "field_true", field)
        outputs += write_volume(out / "mr_moving", mr_moving)
        outputs += write_volume(out / "mask_moving", mask_moving)
        truth_doc["deformation"] = {"amplitude": amp,
                                    "smoothness": p["deformation"]["smoothness"]}
    truth_path = out / "truth.json"
    truth_path.write_text(json.dumps(truth_doc, indent=2) + "\n")
    outputs.append(truth_path)
    return outputs


def cmd_reconstruct(cfg, out: Path, seed: int, skip_on_no_consensus=False):
    r = cfg["reconstruct"]
    frames = read_frames(_require(r["frames"], "reconstruct.frames"))
    sagittal = [f for f in frames if f.view == SAGITTAL]
    transverse = [f for f in frames if f.view == TRANSVERSE]
    if not sagittal or not transverse:
        raise ValidationError("frame directory must contain both views")
    for group in (sagittal, transverse):
        indices = [f.index for f in group]
        if indices != sorted(indices):
            raise ValidationError("frames are not in acquisition order")
    if len(sagittal) == 1:
        warnings.warn("single-frame sweep: reconstructing a degenerate 1-plane volume")

    policy = "skip" if skip_on_no_consensus else r["policy"]
    state, offsets = stitch_sweep(sagittal, r["matcher"], r["eps"], r["min_pts"],
                                  policy=policy)
    z_positions = transfer_positions(offsets)

    if r["dims"] is not None:
        dims = tuple(r["dims"])
    else:
        x, y = transverse[0].shape
        frame_width = sagittal[0].shape[1]
        zmax = max(z for z in z_positions if z is not None)
        dims = (x, y, zmax + frame_width)
    sparse = assemble_sparse_volume(transverse, z_positions, dims)

    inpaint_info = {"method": r["inpaint"]}
    if r["inpaint"] == "dip":
        dense, info = dip_inpaint(sparse, iters=r["dip"]["iters"],
                                  lr=r["dip"]["lr"], seed=seed)
        inpaint_info.update(info)
    elif r["inpaint"] == "interp":
        dense = interp_inpaint(sparse)
    else:
        raise ValidationError(f"unknown inpainting method {r['inpaint']!r}")

    outputs = []
    outputs += write_volume(out / "sparse", sparse)
    outputs += write_volume(
        out / "sparse_validity",
        Volume(sparse.validity.astype(np.float32), sparse.spacing))
    outputs += write_volume(out / "dense", dense)
    report = {
        "frames": state.reports,
        "z_positions": z_positions,
        "skipped": [rep["index"] for rep in state.reports if rep["skipped"]],
        "dims": list(dims),
        "inpaint": inpaint_info,
        "single_frame": len(sagittal) == 1,
    }
    report_path = out / "localization_report.json"
    report_path.write_text(json.dumps(report, indent=2) + "\n")
    outputs.append(report_path)
    return outputs


def _volume_slices(paths, name):
    pool = []
    for path in paths:
        vol = _require_volume(path, name)
        pool.append(np.moveaxis(vol.voxels.astype(np.float32), 2, 0))
    if not pool:
        raise ValidationError(f"{name} must list at least one volume")
    shapes = {p.shape[1:] for p in pool}
    if len(shapes) != 1:
        raise ValidationError(f"{name}: slice shapes disagree: {sorted(shapes)}")
    return np.concatenate(pool, axis=0)


def _augment_slices(batch, rng):
    """Seeded random flips / 90-degree rotations, applied per batch."""
    if rng.random() < 0.5:
        batch = batch[:, ::-1]
    if rng.random() < 0.5:
        batch = batch[:, :, ::-1]
    if batch.shape[1] == batch.shape[2]:
        batch = np.rot90(batch, k=int(rng.integers(4)), axes=(1, 2))
    return np.ascontiguousarray(batch)


def _acmt_schedule(t):
    return BridgeSchedule(tuple(t["times"]), t["sigma"])


def _acmt_weights(t):
    w = t["weights"]
    return AcmtLossWeights(w["sb"], w["boundary"], w["texture"])


def cmd_translate_train(cfg, out: Path, seed: int):
    t = cfg["translate"]
    mr_slices = _volume_slices(t["mr_volumes"], "translate.mr_volumes")
    us_slices = _volume_slices(t["us_volumes"], "translate.us_volumes")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    net_cfg = dict(t["net"])
    net = TranslatorNet(ndim=2, **net_cfg)
    schedule = _acmt_schedule(t)
    weights = _acmt_weights(t)
    optimizer = torch.optim.Adam(net.parameters(), lr=t["lr"])

    log_path = out / "translate_train_log.jsonl"
    with open(log_path, "w") as log:
        for step in range(t["steps"]):
            bm = mr_slices[rng.integers(len(mr_slices), size=t["batch"])]
            bu = us_slices[rng.integers(len(us_slices), size=t["batch"])]
            if t["augment"]:
                bm = _augment_slices(bm, rng)
                bu = _augment_slices(bu, rng)
            report = acmt_train_step(bm, bu, net, schedule, weights, rng,
                                     optimizer, use_entropy=t["entropy"])
            log.write(json.dumps({"step": step, "augment": bool(t["augment"]),
                                  **report}) + "\n")
    ckpt = out / "translator"
    save_acmt_checkpoint(ckpt, net, schedule, weights, t["steps"], seed)
    return [log_path, ckpt.with_suffix(".pt"), ckpt.with_suffix(".json")]


def _check_sidecar(sidecar, expected, what):
    for key, val in expected.items():
        if sidecar.get(key) != val:
            raise ConfigError(
                f"checkpoint {what} mismatch for {key!r}: "
                f"checkpoint has {sidecar.get(key)!r}, config wants {val!r}"
            )


def cmd_translate(cfg, out: Path, seed: int):
    t = cfg["translate"]
    vol = _require_volume(t["input"], "translate.input")
    net, schedule, _, sidecar = load_acmt_checkpoint(
        _require(t["checkpoint"], "translate.checkpoint"))
    net_cfg = dict(t["net"])
    net_cfg.setdefault("ndim", 2)
    _check_sidecar(sidecar["net"],
                   {"shallow_level": t["net"]["shallow_level"],
                    "deep_level": (t["net"]["deep_level"]
                                   if t["net"]["deep_level"] is not None
                                   else sidecar["net"]["deep_level"]),
                    "base": t["net"]["base"], "levels": t["net"]["levels"]},
                   "net config")
    _check_sidecar(sidecar["schedule"],
                   {"times": list(t["times"]), "sigma": t["sigma"]}, "schedule")
    rng = np.random.default_rng(seed)
    translated = translate(vol, net, schedule, rng, mode=t["mode"])
    return write_volume(out / t["output"], translated)


def cmd_register_train(cfg, out: Path, seed: int):
    r = cfg["register"]
    moving_t = _require_volume(r["moving_t"], "register.moving_t")
    fixed_t = _require_volume(r["fixed_t"], "register.fixed_t")
    if r["resample_dims"] is not None:
        moving_t = _resample(moving_t, tuple(r["resample_dims"]))
        fixed_t = _resample(fixed_t, tuple(r["resample_dims"]))
    if moving_t.dims != fixed_t.dims:
        raise ValidationError(
            f"volume dims disagree: {moving_t.dims} vs {fixed_t.dims}")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    net = RegNet(**r["net"])
    weights = RegLossWeights(r["weights"]["sim"], r["weights"]["smooth"],
                             r["weights"]["diff"])
    optimizer = torch.optim.Adam(net.parameters(), lr=r["lr"])
    log_path = out / "register_train_log.jsonl"
    with open(log_path, "w") as log:
        for step in range(r["steps"]):
            mv, fx = moving_t, fixed_t
            flips = []
            if r["augment"]:
                flips = [ax for ax in range(3) if rng.random() < 0.5]
                if flips:
                    mvv = np.flip(mv.voxels, flips).copy()
                    fxv = np.flip(fx.voxels, flips).copy()
                    mv, fx = Volume(mvv, mv.spacing), Volume(fxv, fx.spacing)
            report = reg_train_step(mv, fx, net, weights, r["noise_level"],
                                    rng, optimizer)
            log.write(json.dumps({"step": step, "flips": flips, **report}) + "\n")
    ckpt = out / "registrator"
    save_reg_checkpoint(ckpt, net, weights, r["noise_level"], r["steps"], seed)
    return [log_path, ckpt.with_suffix(".pt"), ckpt.with_suffix(".json")]


def cmd_register(cfg, out: Path, seed: int):
    r = cfg["register"]
    moving = _require_volume(r["moving"], "register.moving")
    fixed = _require_volume(r["fixed"], "register.fixed")
    moving_t = _require_volume(r["moving_t"], "register.moving_t")
    fixed_t = _require_volume(r["fixed_t"], "register.fixed_t")
    net, _, sidecar = load_reg_checkpoint(
        _require(r["checkpoint"], "register.checkpoint"))
    _check_sidecar(sidecar["net"], r["net"], "net config")
    warped, phi = register(moving, fixed, moving_t, fixed_t, net)
    outputs = write_volume(out / "warped", warped)
    outputs += write_volume(out / "field", phi)
    return outputs


def _checkerboard(a, b, tiles):
    h, w = a.shape
    ys = np.linspace(0, h, tiles + 1).astype(int)
    xs = np.linspace(0, w, tiles + 1).astype(int)
    out = a.copy()
    for i in range(tiles):
        for j in range(tiles):
            if (i + j) % 2:
                out[ys[i]:ys[i + 1], xs[j]:xs[j + 1]] = \
                    b[ys[i]:ys[i + 1], xs[j]:xs[j + 1]]
    return out


def cmd_evaluate(cfg, out: Path, seed: int):
    e = cfg["evaluate"]
    mask_a = _require_volume(e["mask_a"], "evaluate.mask_a")
    mask_b = _require_volume(e["mask_b"], "evaluate.mask_b")
    if mask_a.dims != mask_b.dims:
        raise ValidationError(
            f"mask dims disagree: {mask_a.dims} vs {mask_b.dims}")
    ma = mask_a.voxels > 0.5
    mb = mask_b.voxels > 0.5
    report = {
        "dsc": dsc(ma, mb),
        "iou": iou(ma, mb),
        "asd": asd(ma, mb),
        "provenance": {
            "mask_a": str(e["mask_a"]),
            "mask_b": str(e["mask_b"]),
            "extractor": e["extractor"],
            "seed": seed,
        },
    }
    outputs = []
    if e["field"] is not None:
        field = read_volume(e["field"])
        if not isinstance(field, DeformationField):
            raise ValidationError("evaluate.field must be a 3-component volume")
        report["harmonic_energy"] = harmonic_energy(field)
        report["provenance"]["field"] = str(e["field"])
    if e["volume_a"] is not None and e["volume_b"] is not None:
        va = _require_volume(e["volume_a"], "evaluate.volume_a")
        vb = _require_volume(e["volume_b"], "evaluate.volume_b")
        extractor = get_extractor(e["extractor"])
        fa = extractor([va.voxels[:, :, z] for z in range(va.dims[2])], seed=seed)
        fb = extractor([vb.voxels[:, :, z] for z in range(vb.dims[2])], seed=seed)
        report["fid"] = fid_metric(fa, fb)
        report["kid"] = kid(fa, fb)
        report["provenance"]["volume_a"] = str(e["volume_a"])
        report["provenance"]["volume_b"] = str(e["volume_b"])
        if e["montage"]:
            za = va.voxels[:, :, va.dims[2] // 2]
            zb = vb.voxels[:, :, vb.dims[2] // 2]
            board = _checkerboard(za, zb, e["checker_tiles"])
            png = out / "checkerboard.png"
            arr = np.clip(board, 0, 1)
            Image.fromarray((arr * 255).astype(np.uint8)).save(png)
            outputs.append(png)
    path = out / "metrics.json"
    path.write_text(json.dumps(report, indent=2) + "\n")
    outputs.append(path)
    return outputs


COMMANDS = {
    "phantom": cmd_phantom,
    "reconstruct": cmd_reconstruct,
    "translate-train": cmd_translate_train,
    "translate": cmd_translate,
    "register-train": cmd_register_train,
    "register": cmd_register,
    "evaluate": cmd_evaluate,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mr2us",
        description="MR-to-US reconstruction, translation, and registration pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=".", help="output directory")
        if name == "reconstruct":
            p.add_argument("--skip-on-no-consensus", action="store_true",
                           help="skip unlocalizable frames instead of aborting")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get("MR2US_THREADS")
    if threads:
        torch.set_num_threads(int(threads))
    try:
        cfg = load_config(args.config)
        seed = args.seed if args.seed is not None else cfg["seed"]
        started = time.time()
        with _RunDir(args.out) as out:
            if args.command == "reconstruct":
                outputs = cmd_reconstruct(cfg, out, seed,
                                          args.skip_on_no_consensus)
            else:
                outputs = COMMANDS[args.command](cfg, out, seed)
            _write_manifest(out, cfg, seed, outputs, started)
    except Mr2usError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
