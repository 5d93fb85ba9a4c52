"""Seeded synthetic dataset generator with known geometry.

Each scene is a multiscale random texture "world"; the HR frame is a crop of
it, and every LR burst frame is the world seen through a known projective
jitter, an altitude-dependent Gaussian blur, and an exact x9/50 bicubic
downscale (plus optional noise / color drift / RAW mosaics). The generator
writes a JSON-lines manifest consumable by the registration pipeline and a
ground-truth JSON with the exact LR->HR homography of every frame, so
registration accuracy can be scored against known geometry.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InvalidInputError
from .geometry import Homography, warp_image
from .imgcore import BayerRaw, Image, crop, crop_padded, resize_bicubic
from .imgio import write_image, write_raw
from .registration import ALTITUDES, BURST_LEN, SCALE

TEXTURE_SCALES = (2.0, 8.0, 32.0)


@dataclass(frozen=True)
class SynthSpec:
    n_scenes: int = 3
    altitudes: tuple = ALTITUDES
    hr_size: tuple = (1500, 2000)  # (h, w); both sides divisible by 50
    margin: int = 500              # extra world border (LR sees more than HR)
    burst: int = BURST_LEN
    jitter_px: float = 1.5         # max per-frame translation at LR scale
    jitter_persp: float = 2e-6     # projective row perturbation
    sigma_min: float = 0.5         # Gaussian blur at HR scale, lowest altitude
    sigma_max: float = 2.0         # ... highest altitude
    noise_std: float = 0.0
    color_drift: float = 0.04      # per-channel LR gain range (+/-)
    raw: bool = False
    corrupt_patches: int = 0       # stamped occluders per scene (frame 0)
    cheap_burst: bool = True       # frames 1..6 as integer-shifted copies of frame 0
    seed: int = 0

    def __post_init__(self):
        h, w = self.hr_size
        if (h * SCALE.denominator) % SCALE.numerator or \
                (w * SCALE.denominator) % SCALE.numerator:
            raise InvalidInputError(
                f"hr_size {self.hr_size} not divisible by {SCALE} (need multiples of 50)")
        if self.margin % 50:
            raise InvalidInputError(f"margin must be a multiple of 50, got {self.margin}")
        if not all(a in ALTITUDES for a in self.altitudes):
            raise InvalidInputError(f"altitudes must come from {ALTITUDES}")
        if self.burst != BURST_LEN:
            raise InvalidInputError(f"burst must be {BURST_LEN}")
        if self.sigma_min < 0 or self.sigma_max < self.sigma_min:
            raise InvalidInputError("need 0 <= sigma_min <= sigma_max")


def sigma_for_altitude(spec: SynthSpec, altitude: int) -> float:
    """Blur width grows linearly from sigma_min to sigma_max over the altitude span."""
    alts = spec.altitudes
    if len(alts) == 1 or spec.sigma_max == spec.sigma_min:
        return spec.sigma_min
    t = (altitude - min(alts)) / (max(alts) - min(alts))
    return spec.sigma_min + t * (spec.sigma_max - spec.sigma_min)


def multiscale_texture(h, w, rng, channels=3):
    """Sum of Gaussian-smoothed noise fields; coarse scales weighted up so the
    spectrum falls off like a natural image rather than white noise."""
    out = np.zeros((channels, h, w))
    for c in range(channels):
        acc = np.zeros((h, w))
        for s in TEXTURE_SCALES:
            acc += gaussian_filter(rng.standard_normal((h, w)), s) * s
        out[c] = acc
    shared = np.zeros((h, w))
    for s in TEXTURE_SCALES:
        shared += gaussian_filter(rng.standard_normal((h, w)), s) * s
    out = 0.6 * out + 0.4 * shared[None]
    out -= out.min()
    out /= out.max()
    return Image(out)


def _split_for_scene(i, n):
    """Deterministic train/val/test assignment, roughly 60/20/20."""
    if n < 3:
        return "train"
    if i < int(round(0.6 * n)):
        return "train"
    if i < int(round(0.8 * n)):
        return "val"
    return "test"


def _jitter_homography(rng, spec):
    """Small world->warped perturbation: translation (jitter_px at LR scale,
    i.e. x50/9 at world scale), slight rotation, slight perspective."""
    s = float(SCALE)
    tx, ty = rng.uniform(-spec.jitter_px * s, spec.jitter_px * s, 2)
    theta = rng.uniform(-2e-3, 2e-3) * (1.0 if spec.jitter_px > 0 else 0.0)
    px, py = rng.uniform(-spec.jitter_persp, spec.jitter_persp, 2)
    c, sn = np.cos(theta), np.sin(theta)
    return Homography(np.array([[c, -sn, tx], [sn, c, ty], [px, py, 1.0]]))


def _scale_affine():
    """LR pixel coords -> world pixel coords for the exact x50/9 relation."""
    s = float(SCALE)
    return Homography(np.array([[s, 0.0, 0.5 * s - 0.5],
                                [0.0, s, 0.5 * s - 0.5],
                                [0.0, 0.0, 1.0]]))


def _to_raw(img: Image) -> BayerRaw:
    """RGGB mosaic of an RGB image (no demosaic model, direct site sampling)."""
    r, g, b = img.data
    h, w = r.shape
    mosaic = np.empty((h, w))
    mosaic[0::2, 0::2] = r[0::2, 0::2]
    mosaic[0::2, 1::2] = g[0::2, 1::2]
    mosaic[1::2, 0::2] = g[1::2, 0::2]
    mosaic[1::2, 1::2] = b[1::2, 1::2]
    return BayerRaw(np.round(mosaic * 65535.0).astype(np.uint16), pattern="RGGB")


def generate_dataset(spec: SynthSpec, out_dir):
    """Write the dataset; returns (manifest_path, ground_truth_path).

    Ground truth holds, per (scene, altitude, frame), the exact 3x3 homography
    mapping LR pixel coords to HR pixel coords, the blur sigma, and any
    stamped-occluder rectangles (LR coords, frame 0 only).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hr_h, hr_w = spec.hr_size
    wh, ww = hr_h + spec.margin, hr_w + spec.margin
    lr_h = wh * SCALE.denominator // SCALE.numerator
    lr_w = ww * SCALE.denominator // SCALE.numerator
    s_aff = _scale_affine()
    root = np.random.SeedSequence(spec.seed)
    scene_seeds = root.spawn(spec.n_scenes)
    manifest_rows = []
    gt = {"spec": asdict(spec), "scenes": {}}
    for i in range(spec.n_scenes):
        scene_id = f"scene_{i:03d}"
        split = _split_for_scene(i, spec.n_scenes)
        rng = np.random.default_rng(scene_seeds[i])
        world = multiscale_texture(wh, ww, rng)
        # keep the HR crop away from the world border: frame jitter leaves a
        # thin zero-filled strip there that must stay outside every LR FOV
        pad = 16
        hy = int(rng.integers(pad, spec.margin - pad + 1))
        hx = int(rng.integers(pad, spec.margin - pad + 1))
        hr = crop(world, (hy, hx, hr_h, hr_w))
        scene_dir = out / scene_id
        scene_dir.mkdir(exist_ok=True)
        hr_path = scene_dir / "hr.png"
        write_image(hr_path, hr)
        t_aff = Homography(np.array([[1.0, 0.0, -hx], [0.0, 1.0, -hy],
                                     [0.0, 0.0, 1.0]]))
        gt_scene = {"split": split, "hr_origin": [hy, hx], "altitudes": {}}
        for alt in spec.altitudes:
            sigma = sigma_for_altitude(spec, alt)
            alt_dir = scene_dir / f"alt_{alt:03d}"
            alt_dir.mkdir(exist_ok=True)
            gains = 1.0 + rng.uniform(-spec.color_drift, spec.color_drift, 3)
            frames, raws, homs, corrupt_rects = [], [], [], []
            frame0 = None
            h0 = None
            for k in range(spec.burst):
                if k > 0 and spec.cheap_burst:
                    # integer LR-pixel shift of frame 0 (edge-extended), with
                    # the ground-truth homography adjusted exactly
                    dy, dx = (int(v) for v in rng.integers(-2, 3, 2))
                    data = crop_padded(frame0, (dy, dx, lr_h, lr_w)).data.copy()
                    shift = Homography(np.array([[1.0, 0.0, dx], [0.0, 1.0, dy],
                                                 [0.0, 0.0, 1.0]]))
                    h_lr2hr = h0.compose(shift)
                else:
                    jit = _jitter_homography(rng, spec)
                    warped, _ = warp_image(world, jit, wh, ww)
                    blurred = Image(np.stack(
                        [gaussian_filter(c, sigma, mode="nearest") for c in warped.data]))
                    lr = resize_bicubic(blurred, lr_h, lr_w)
                    # warp_image: warped(p) = world(jit^-1(p)), so LR->HR chains
                    # the scale map, the inverse jitter, and the HR-crop shift
                    h_lr2hr = t_aff.compose(jit.inverse()).compose(s_aff)
                    data = lr.data * gains[:, None, None]
                if spec.noise_std > 0:
                    data = data + rng.normal(0.0, spec.noise_std, data.shape)
                if k == 0 and spec.corrupt_patches > 0:
                    for _ in range(spec.corrupt_patches):
                        ch = max(lr_h // 10, 8)
                        cw = max(lr_w // 10, 8)
                        cy = int(rng.integers(0, lr_h - ch))
                        cx = int(rng.integers(0, lr_w - cw))
                        data[:, cy:cy + ch, cx:cx + cw] = \
                            rng.uniform(0, 1, (3, 1, 1))
                        corrupt_rects.append([cy, cx, ch, cw])
                lr = Image(np.clip(data, 0.0, 1.0))
                if k == 0:
                    frame0, h0 = lr, h_lr2hr
                lr_path = alt_dir / f"lr_{k}.png"
                write_image(lr_path, lr)
                frames.append(str(lr_path))
                if spec.raw:
                    raw_path = alt_dir / f"lr_{k}.pgm"
                    write_raw(raw_path, _to_raw(lr))
                    raws.append(str(raw_path))
                homs.append(h_lr2hr.matrix.tolist())
            gt_scene["altitudes"][str(alt)] = {
                "sigma": sigma, "gains": gains.tolist(),
                "lr_to_hr": homs, "corrupt_rects": corrupt_rects}
            manifest_rows.append({
                "scene_id": scene_id, "altitude": alt, "split": split,
                "hr_path": str(hr_path), "lr_burst_paths": frames,
                "raw_paths": raws})
        gt["scenes"][scene_id] = gt_scene
    manifest_path = out / "manifest.jsonl"
    with open(manifest_path, "w") as f:
        for row in manifest_rows:
            f.write(json.dumps(row) + "\n")
    gt_path = out / "ground_truth.json"
    with open(gt_path, "w") as f:
        json.dump(gt, f, indent=1)
    return manifest_path, gt_path


def load_ground_truth(path):
    with open(path) as f:
        return json.load(f)
