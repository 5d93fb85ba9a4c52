"""Command-line surface tying the pipeline together.

Subcommands: register, synth, eval, analyze, train, infer. Every command
writes its resolved RunConfig as JSON next to its outputs, and re-running
with ``--config <that file>`` reproduces the outputs bit-identically
(single-threaded). Exit codes: 0 success, 2 input error, 3 pairing error,
4 checkpoint/config mismatch. Set DSRF_LOG to control the log level.
"""

import argparse
import json
import logging
import os
import re
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import analysis
from .aanet import (NetworkConfig, Sample, aafcnn_forward, config_hash,
                    init_params, load_checkpoint, save_checkpoint, train)
from .errors import DroneSRError, InvalidInputError
from .features import SiftParams
from .imgcore import Image, resize_bicubic
from .imgio import read_image, read_raw, write_image
from .metrics import psnr_y, ssim_y
from .registration import (ALTITUDES, PatchPair, RegistrationConfig,
                           ValidationReport, apply_color_correction,
                           error_map_report, extract_patches, load_manifest,
                           match_fov, register_raw, save_pair_outputs)
from .synth import SynthSpec, generate_dataset

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PAIRING = 3
EXIT_CONFIG = 4

IMAGE_EXTS = (".png", ".ppm", ".pgm")

log = logging.getLogger("dronesr")


@dataclass(frozen=True)
class RunConfig:
    """Resolved parameters of one command invocation, written next to outputs."""

    command: str
    params: dict
    seed: int = 0
    jobs: int = 1

    def save(self, out_dir):
        path = Path(out_dir) / "run_config.json"
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n")
        return path

    @staticmethod
    def load(path):
        rec = json.loads(Path(path).read_text())
        return RunConfig(command=rec["command"], params=rec["params"],
                         seed=rec.get("seed", 0), jobs=rec.get("jobs", 1))


def _setup_logging():
    level = os.environ.get("DSRF_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def _parse_size(text, name):
    """'720x540' -> (540, 720): CLI order is WxH, internal order is (h, w)."""
    m = re.fullmatch(r"(\d+)x(\d+)", text)
    if not m:
        raise InvalidInputError(f"{name} must look like WxH, got {text!r}")
    return int(m.group(2)), int(m.group(1))


def _apply_saved_config(args):
    """--config replays a saved RunConfig: its params override the CLI flags.

    A saved config from a *different* command is not replayed; infer uses it
    only to verify the checkpoint's NetworkConfig hash."""
    if getattr(args, "config", None):
        saved = RunConfig.load(args.config)
        if saved.command != args.command:
            return args
        for key, value in saved.params.items():
            if hasattr(args, key):
                setattr(args, key, value)
        if hasattr(args, "seed"):
            args.seed = saved.seed
        if hasattr(args, "jobs"):
            args.jobs = saved.jobs
    return args


# ---------------------------------------------------------------- register

def _registration_config(args) -> RegistrationConfig:
    return RegistrationConfig(
        fov_size=tuple(_parse_size(args.fov, "--fov")),
        patch=args.patch, stride=args.stride, ncc_thresh=args.ncc_thresh,
        seed=args.seed,
        patch_sift=SiftParams(max_keypoints=args.patch_keypoints,
                              max_octaves=3, contrast_thresh=0.01))


def _register_scene(scene, cfg, out_dir):
    lr = read_image(scene.lr_burst_paths[0])
    hr = read_image(scene.hr_path)
    pair = apply_color_correction(match_fov(lr, hr, cfg))
    patches = extract_patches(pair, cfg)
    save_pair_outputs(out_dir, scene, pair, patches)
    if scene.raw_paths:
        base = Path(out_dir) / scene.split / scene.scene_id / str(scene.altitude)
        for k, rp in enumerate(scene.raw_paths):
            packed_fov, _ = register_raw(read_raw(rp), pair, cfg)
            np.save(base / f"raw_fov_{k}.npy",
                    packed_fov.data.astype(np.float32))
    return pair, patches


def cmd_register(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenes = load_manifest(args.manifest)
    if args.altitude is not None:
        scenes = [s for s in scenes if s.altitude in args.altitude]
    cfg = _registration_config(args)
    report = ValidationReport()
    jobs = max(1, args.jobs)

    def work(scene):
        return _register_scene(scene, cfg, out)

    if jobs > 1 and len(scenes) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_register_scene, scenes,
                                    [cfg] * len(scenes), [out] * len(scenes)))
        outcomes = zip(scenes, results)
    else:
        outcomes = []
        for scene in scenes:
            try:
                outcomes.append((scene, work(scene)))
            except DroneSRError as e:
                log.warning("scene %s alt %d failed: %s",
                            scene.scene_id, scene.altitude, e)
                report.add_failure(scene.scene_id, scene.altitude, e)
    for scene, (_pair, patches) in outcomes:
        for pp in patches:
            report.add_patch(scene.split, scene.altitude, pp)
        log.info("registered %s alt %d: %d/%d valid patches",
                 scene.scene_id, scene.altitude,
                 sum(p.valid for p in patches), len(patches))
    report.to_csv(out / "report.csv")
    RunConfig("register", {
        "manifest": str(args.manifest), "out": str(out), "fov": args.fov,
        "patch": args.patch, "stride": args.stride,
        "ncc_thresh": args.ncc_thresh, "altitude": args.altitude,
        "patch_keypoints": args.patch_keypoints,
    }, seed=args.seed, jobs=args.jobs).save(out)
    log.info("report: %d patches, %d scene failures",
             report.total_patches(), len(report.failures))
    return EXIT_OK


# ------------------------------------------------------------------- synth

def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    altitudes = tuple(args.altitude) if args.altitude else ALTITUDES
    spec = SynthSpec(n_scenes=args.scenes,
                     altitudes=altitudes,
                     hr_size=tuple(_parse_size(args.hr_size, "--hr-size")),
                     noise_std=args.noise,
                     corrupt_patches=args.corrupt,
                     raw=args.raw,
                     seed=args.seed)
    manifest_path, gt_path = generate_dataset(spec, out)
    RunConfig("synth", {
        "out": str(out), "scenes": args.scenes, "hr_size": args.hr_size,
        "noise": args.noise, "corrupt": args.corrupt, "raw": args.raw,
        "altitude": args.altitude,
    }, seed=args.seed).save(out)
    log.info("wrote %s and %s", manifest_path, gt_path)
    print(manifest_path)
    return EXIT_OK


# -------------------------------------------------------------------- eval

def _image_tree(root):
    root = Path(root)
    return {str(p.relative_to(root)): p
            for p in sorted(root.rglob("*")) if p.suffix.lower() in IMAGE_EXTS}


def _altitude_of(relpath):
    m = re.search(r"alt[_-]?(\d+)", relpath)
    return int(m.group(1)) if m else -1


def cmd_eval(args):
    pred = _image_tree(args.pred)
    gt = _image_tree(args.gt)
    missing = sorted(set(pred) ^ set(gt))
    if missing:
        for rel in missing:
            side = "gt" if rel in pred else "pred"
            print(f"unmatched ({side} missing): {rel}", file=sys.stderr)
        return EXIT_PAIRING
    if not pred:
        raise InvalidInputError("no images to evaluate")
    lr = _image_tree(args.lr) if args.lr else {}
    rows = {}
    for rel in sorted(pred):
        p, g = read_image(pred[rel]), read_image(gt[rel])
        row = rows.setdefault(_altitude_of(rel), {
            "n": 0, "psnr": [], "ssim": [], "exact": 0,
            "bicubic_psnr": [], "bicubic_ssim": []})
        row["n"] += 1
        row["psnr"].append(psnr_y(p, g, border_shave=args.shave).db)
        row["ssim"].append(ssim_y(p, g, border_shave=args.shave))
        row["exact"] += int(np.array_equal(p.data, g.data))
        if rel in lr:
            up = resize_bicubic(read_image(lr[rel]), g.height, g.width)
            up = Image(np.clip(up.data, 0.0, 1.0))
            row["bicubic_psnr"].append(psnr_y(up, g, border_shave=args.shave).db)
            row["bicubic_ssim"].append(ssim_y(up, g, border_shave=args.shave))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "eval.csv", "w") as f:
        f.write("altitude,n,psnr,ssim,bicubic_psnr,bicubic_ssim,exact_matches\n")
        for alt in sorted(rows):
            r = rows[alt]
            bp = f"{np.mean(r['bicubic_psnr']):.4f}" if r["bicubic_psnr"] else ""
            bs = f"{np.mean(r['bicubic_ssim']):.4f}" if r["bicubic_ssim"] else ""
            f.write(f"{alt if alt >= 0 else 'all'},{r['n']},"
                    f"{np.mean(r['psnr']):.4f},{np.mean(r['ssim']):.4f},"
                    f"{bp},{bs},{r['exact']}\n")
    RunConfig("eval", {
        "pred": str(args.pred), "gt": str(args.gt),
        "lr": str(args.lr) if args.lr else None, "out": str(out),
        "shave": args.shave,
    }).save(out)
    return EXIT_OK


# ----------------------------------------------------------------- analyze

def cmd_analyze(args):
    if not args.inputs:
        raise InvalidInputError("analyze needs at least one input")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "psd":
        psd = analysis.radial_psd([read_image(p) for p in args.inputs])
        analysis.export_psd_csv(out / "psd.csv", psd)
        analysis.export_psd_svg(out / "psd.svg", [("input", psd)])
    elif args.kind == "kernel":
        if len(args.inputs) % 2:
            raise InvalidInputError(
                "kernel analysis needs lr/hr pairs (even number of inputs)")
        pairs = [(read_image(args.inputs[i]), read_image(args.inputs[i + 1]))
                 for i in range(0, len(args.inputs), 2)]
        kernel = analysis.estimate_blur_kernel(pairs)
        analysis.export_kernel_csv(out / "kernel.csv", kernel)
        analysis.export_kernel_png(out / "kernel.png", kernel)
    else:  # errmap
        if len(args.inputs) != 2:
            raise InvalidInputError("errmap analysis needs exactly lr hr")
        from .geometry import Homography
        pp = PatchPair(lr_patch=read_image(args.inputs[0]),
                       hr_patch=read_image(args.inputs[1]),
                       local_homography=Homography.identity(), origin=(0, 0))
        vis, summary = error_map_report(pp)
        write_image(out / "errmap.png", vis)
        (out / "errmap.json").write_text(json.dumps(summary, indent=1))
    RunConfig("analyze", {
        "kind": args.kind, "inputs": [str(p) for p in args.inputs],
        "out": str(out),
    }).save(out)
    return EXIT_OK


# ------------------------------------------------------------- train/infer

def _load_patch_samples(data_dir):
    """Collect (lr, hr, altitude) triples from the register output layout."""
    samples = []
    for meta_path in sorted(Path(data_dir).rglob("meta_*.json")):
        meta = json.loads(meta_path.read_text())
        if not meta.get("valid", True):
            continue
        idx = meta_path.stem.split("_")[-1]
        lr = read_image(meta_path.parent / f"lr_{idx}.png")
        hr = read_image(meta_path.parent / f"hr_{idx}.png")
        samples.append(Sample(lr=lr.data, hr=hr.data,
                              altitude=float(meta["altitude"])))
    return samples


def cmd_train(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = _load_patch_samples(args.data)
    if not samples:
        raise InvalidInputError(f"no training patches under {args.data}")
    config = NetworkConfig(
        channels=args.channels, hidden_layers=args.layers,
        conditioning="none" if args.freeze_altitude else "altitude")
    result = train(samples, config, seed=args.seed, steps=args.steps,
                   batch_size=args.batch, lr=args.lr,
                   metrics_path=out / "metrics.csv", log=log.info)
    ckpt = out / "checkpoint.dsr"
    save_checkpoint(ckpt, config, result.store.params)
    RunConfig("train", {
        "data": str(args.data), "out": str(out), "steps": args.steps,
        "batch": args.batch, "lr": args.lr, "channels": args.channels,
        "layers": args.layers, "freeze_altitude": args.freeze_altitude,
        "config_hash": config_hash(config),
    }, seed=args.seed).save(out)
    log.info("saved %s (config hash %s)", ckpt, config_hash(config))
    return EXIT_OK


def cmd_infer(args):
    config, params = load_checkpoint(args.checkpoint)
    if args.config:
        expected = RunConfig.load(args.config).params.get("config_hash")
        if expected is not None and expected != config_hash(config):
            print(f"config mismatch: run config expects {expected}, "
                  f"checkpoint has {config_hash(config)}", file=sys.stderr)
            return EXIT_CONFIG
    if args.freeze_altitude and config.conditioning != "none":
        config = replace(config, conditioning="none")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in args.inputs:
        img = read_image(path)
        sr = aafcnn_forward(img, args.altitude, params, config)
        dest = out / f"{Path(path).stem}_sr_alt{args.altitude:g}.png"
        write_image(dest, sr)
        log.info("wrote %s", dest)
    RunConfig("infer", {
        "checkpoint": str(args.checkpoint),
        "inputs": [str(p) for p in args.inputs], "out": str(out),
        "altitude": args.altitude, "freeze_altitude": args.freeze_altitude,
        "config_hash": config_hash(config),
    }).save(out)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser():
    ap = argparse.ArgumentParser(
        prog="dronesr",
        description="Drone burst super-resolution pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True, jobs=False):
        p.add_argument("--config", default=None,
                       help="replay a saved run_config.json")
        if seed:
            p.add_argument("--seed", type=int, default=0)
        if jobs:
            p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("register", help="register LR bursts against HR frames")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ncc-thresh", type=float, default=0.9)
    p.add_argument("--patch", type=int, default=180)
    p.add_argument("--stride", type=int, default=180)
    p.add_argument("--fov", default="720x540")
    p.add_argument("--altitude", type=int, action="append", default=None,
                   help="restrict to these altitudes (repeatable)")
    p.add_argument("--patch-keypoints", type=int, default=1000,
                   help="SIFT keypoint cap for patch refinement")
    common(p, jobs=True)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("synth", help="generate a synthetic dataset with known geometry")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=3)
    p.add_argument("--hr-size", default="2000x1500")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--corrupt", type=int, default=0)
    p.add_argument("--raw", action="store_true")
    p.add_argument("--altitude", type=int, action="append", default=None)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="per-altitude PSNR/SSIM against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--lr", default=None,
                   help="matching LR images for the bicubic baseline column")
    p.add_argument("--out", required=True)
    p.add_argument("--shave", type=int, default=6)
    common(p, seed=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="psd / kernel / errmap reports")
    p.add_argument("kind", choices=("psd", "kernel", "errmap"))
    p.add_argument("inputs", nargs="*")
    p.add_argument("--out", required=True)
    common(p, seed=False)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="train the altitude-aware SR network")
    p.add_argument("--data", required=True,
                   help="directory of registered patches (register output)")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--channels", type=int, default=128)
    p.add_argument("--layers", type=int, default=8)
    p.add_argument("--freeze-altitude", action="store_true",
                   help="ablation: replace the altitude code with a constant")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve images with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--altitude", type=float, required=True)
    p.add_argument("--freeze-altitude", action="store_true")
    common(p, seed=False)
    p.set_defaults(func=cmd_infer)
    return ap


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        args = _apply_saved_config(args)
        return args.func(args)
    except (InvalidInputError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except DroneSRError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
