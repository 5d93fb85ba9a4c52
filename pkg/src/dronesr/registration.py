"""End-to-end pair construction: FOV matching, fixed-scale resize, color
correction, per-patch refinement, NCC gating, patch extraction, and RAW/burst
transform reuse.

The LR/HR magnification is pinned to exactly x50/9 by resizing the matched
FOV to a fixed resolution (720x540 against 4000-wide HR frames, or any
proportional pair).
"""

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import colorcorr
from .errors import (EstimationFailureError, InvalidInputError,
                     RegistrationFailureError, UndefinedCorrelationError)
from .features import SiftParams, detect_and_describe, match_descriptors
from .geometry import (Homography, apply_homography, ransac_homography,
                       symmetric_transfer_error, warp_image)
from .imgcore import (Image, crop, crop_padded, pack_bayer, resize_bicubic,
                      resize_nearest, rgb_to_y)
from .metrics import ncc as ncc_metric

ALTITUDES = (10, 20, 30, 40, 50, 70, 80, 100, 120, 140)
SPLITS = ("train", "val", "test")
SCALE = Fraction(50, 9)
BURST_LEN = 7


@dataclass(frozen=True)
class ScenePair:
    scene_id: str
    altitude: int
    hr_path: str
    lr_burst_paths: tuple
    split: str
    raw_paths: tuple = ()

    def __post_init__(self):
        if self.altitude not in ALTITUDES:
            raise InvalidInputError(
                f"altitude {self.altitude} not in {ALTITUDES} (scene {self.scene_id})")
        if self.split not in SPLITS:
            raise InvalidInputError(f"split {self.split!r} not in {SPLITS}")
        if len(self.lr_burst_paths) != BURST_LEN:
            raise InvalidInputError(
                f"burst must have {BURST_LEN} frames, got {len(self.lr_burst_paths)} "
                f"(scene {self.scene_id})")
        object.__setattr__(self, "lr_burst_paths", tuple(self.lr_burst_paths))
        object.__setattr__(self, "raw_paths", tuple(self.raw_paths))


@dataclass(frozen=True)
class RegisteredPair:
    lr_fov: Image
    hr: Image
    fov_homography: Homography  # lr_fov pixel coords -> hr pixel coords
    fov_to_lr: Homography = None  # lr_fov pixel coords -> original LR pixel coords
    color_corrected: bool = False

    def __post_init__(self):
        if (self.lr_fov.width * SCALE.numerator != self.hr.width * SCALE.denominator
                or self.lr_fov.height * SCALE.numerator != self.hr.height * SCALE.denominator):
            raise InvalidInputError(
                f"FOV {self.lr_fov.width}x{self.lr_fov.height} vs HR "
                f"{self.hr.width}x{self.hr.height} is not exactly x50/9")


@dataclass(frozen=True)
class PatchPair:
    lr_patch: Image
    hr_patch: Image
    local_homography: Homography  # upsampled-LR-patch coords -> hr coords
    origin: tuple  # (top, left) in lr_fov coords
    ncc: float = float("nan")
    valid: bool = False
    fallback: bool = False
    residual_px: float = float("nan")  # local RANSAC mean inlier transfer error


@dataclass
class ValidationReport:
    """Per-(split, altitude) counters mirroring the valid-pair table layout."""

    rows: dict = field(default_factory=dict)  # (split, altitude) -> stats dict
    failures: list = field(default_factory=list)

    def add_patch(self, split, altitude, pp: PatchPair):
        key = (split, altitude)
        row = self.rows.setdefault(key, {
            "valid": 0, "invalid": 0, "ncc_sum": 0.0, "ncc_min": float("inf"),
            "residual_sum": 0.0, "residual_n": 0})
        row["valid" if pp.valid else "invalid"] += 1
        if np.isfinite(pp.ncc):
            row["ncc_sum"] += pp.ncc
            row["ncc_min"] = min(row["ncc_min"], pp.ncc)
        if np.isfinite(pp.residual_px):
            row["residual_sum"] += pp.residual_px
            row["residual_n"] += 1

    def add_failure(self, scene_id, altitude, message):
        self.failures.append({"scene_id": scene_id, "altitude": altitude,
                              "error": str(message)})

    def total_patches(self):
        return sum(r["valid"] + r["invalid"] for r in self.rows.values())

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("split,altitude,valid,invalid,mean_ncc,min_ncc,mean_residual_px\n")
            for (split, alt) in sorted(self.rows):
                r = self.rows[(split, alt)]
                n = r["valid"] + r["invalid"]
                mean_ncc = r["ncc_sum"] / n if n else float("nan")
                min_ncc = r["ncc_min"] if np.isfinite(r["ncc_min"]) else float("nan")
                res = (r["residual_sum"] / r["residual_n"]) if r["residual_n"] else float("nan")
                f.write(f"{split},{alt},{r['valid']},{r['invalid']},"
                        f"{mean_ncc:.4f},{min_ncc:.4f},{res:.4f}\n")


@dataclass(frozen=True)
class RegistrationConfig:
    fov_size: tuple = (540, 720)  # (h, w)
    patch: int = 180
    stride: int = 180
    ncc_thresh: float = 0.9
    ransac_thresh_px: float = 3.0
    ransac_iters: int = 2000
    seed: int = 0
    min_matches: int = 20
    fov_snap_px: int = 4  # snap near-nominal FOV rects to the exact size
    fov_match_downscale: bool = True  # match FOV on an LR-density HR downscale
    refine_margin_px: int = 50  # HR-pixel search margin around each patch
    min_local_matches: int = 10
    sift: SiftParams = SiftParams()
    # upsampled LR patches are blurry; a lower contrast gate keeps enough features
    patch_sift: SiftParams = SiftParams(max_keypoints=1500, max_octaves=3,
                                        contrast_thresh=0.01)


def _snap_extent(lo, hi, nominal, limit, tol):
    size = hi - lo
    if size == nominal or abs(size - nominal) > tol or nominal > limit:
        return lo, hi
    center = (lo + hi) / 2.0
    lo = int(round(center - nominal / 2.0))
    lo = min(max(lo, 0), limit - nominal)
    return lo, lo + nominal


def _affine(sx, sy, tx, ty):
    return Homography(np.array([[sx, 0.0, tx], [0.0, sy, ty], [0.0, 0.0, 1.0]]))


def _luma(img: Image) -> Image:
    return img if img.channels == 1 else rgb_to_y(img)


def match_fov(lr: Image, hr: Image, cfg: RegistrationConfig = RegistrationConfig()) -> RegisteredPair:
    """Crop the LR region matching the HR frame and resize it to the fixed FOV.

    Features on luminance seed a RANSAC homography LR->HR; the HR extent is
    back-projected into LR, its bounding rectangle cropped and nearest-resized
    to the fixed FOV so the scale is exactly x50/9.
    """
    fov_h, fov_w = cfg.fov_size
    if fov_w * SCALE.numerator != hr.width * SCALE.denominator \
            or fov_h * SCALE.numerator != hr.height * SCALE.denominator:
        raise InvalidInputError(
            f"fov {fov_w}x{fov_h} vs HR {hr.width}x{hr.height} is not exactly x50/9")
    # detect on an LR-density downscale of the HR frame: matching works across
    # comparable resolutions and the cost drops ~30x; per-patch refinement
    # re-estimates at full HR resolution afterwards
    if cfg.fov_match_downscale and min(hr.height, hr.width) > 2 * min(lr.height, lr.width):
        mh = int(round(hr.height * float(SCALE.denominator) / SCALE.numerator * 1.3))
        mw = int(round(hr.width * float(SCALE.denominator) / SCALE.numerator * 1.3))
        hr_match = resize_bicubic(hr, mh, mw)
        dx_s, dy_s = hr.width / mw, hr.height / mh
        to_hr = _affine(dx_s, dy_s, 0.5 * dx_s - 0.5, 0.5 * dy_s - 0.5)
    else:
        hr_match, to_hr = hr, None
    try:
        kps_lr, desc_lr = detect_and_describe(_luma(lr), cfg.sift)
        kps_hr, desc_hr = detect_and_describe(_luma(hr_match), cfg.sift)
    except InvalidInputError as e:
        raise RegistrationFailureError(f"feature detection failed: {e}")
    matches = match_descriptors(desc_lr, desc_hr)
    if len(matches) < cfg.min_matches:
        raise RegistrationFailureError(
            "too few matches for FOV estimation",
            {"n_matches": len(matches), "n_lr": len(kps_lr), "n_hr": len(kps_hr)})
    src = np.array([[kps_lr[m.src_idx].x, kps_lr[m.src_idx].y] for m in matches])
    dst = np.array([[kps_hr[m.dst_idx].x, kps_hr[m.dst_idx].y] for m in matches])
    try:
        h_lr2hr, mask = ransac_homography(src, dst, cfg.ransac_thresh_px,
                                          cfg.ransac_iters, cfg.seed)
    except EstimationFailureError as e:
        raise RegistrationFailureError(f"RANSAC failed: {e}",
                                       {"n_matches": len(matches)})
    if to_hr is not None:
        h_lr2hr = to_hr.compose(h_lr2hr)
    corners = np.array([[0.0, 0.0], [hr.width - 1.0, 0.0],
                        [hr.width - 1.0, hr.height - 1.0], [0.0, hr.height - 1.0]])
    quad = apply_homography(h_lr2hr.inverse(), corners)
    x0 = max(int(np.floor(quad[:, 0].min())), 0)
    y0 = max(int(np.floor(quad[:, 1].min())), 0)
    x1 = min(int(np.ceil(quad[:, 0].max())) + 1, lr.width)
    y1 = min(int(np.ceil(quad[:, 1].max())) + 1, lr.height)
    # variations of a few pixels come from drone drift; when the rect is within
    # snap range of the nominal FOV, recenter it at the exact size so the
    # nearest resize degenerates to a pure copy (no resampling staircase)
    x0, x1 = _snap_extent(x0, x1, fov_w, lr.width, cfg.fov_snap_px)
    y0, y1 = _snap_extent(y0, y1, fov_h, lr.height, cfg.fov_snap_px)
    if x1 - x0 < 8 or y1 - y0 < 8:
        raise RegistrationFailureError("degenerate FOV quadrilateral",
                                       {"bbox": (y0, x0, y1 - y0, x1 - x0)})
    region = crop(lr, (y0, x0, y1 - y0, x1 - x0))
    lr_fov = resize_nearest(region, fov_h, fov_w)
    # lr_fov coords -> original LR coords (half-pixel affine of the resize+crop)
    sx = (x1 - x0) / fov_w
    sy = (y1 - y0) / fov_h
    fov_to_lr = _affine(sx, sy, x0 + 0.5 * sx - 0.5, y0 + 0.5 * sy - 0.5)
    fov_h_matrix = h_lr2hr.compose(fov_to_lr)
    return RegisteredPair(lr_fov=lr_fov, hr=hr, fov_homography=fov_h_matrix,
                          fov_to_lr=fov_to_lr)


def apply_color_correction(pair: RegisteredPair, blur_sigma: float = 15.0) -> RegisteredPair:
    """Adjust the LR FOV towards the HR's colors (HR ground truth untouched)."""
    ref = resize_bicubic(pair.hr, pair.lr_fov.height, pair.lr_fov.width)
    adjusted = colorcorr.color_transfer(pair.lr_fov, ref, blur_sigma)
    adjusted = colorcorr.histogram_match(adjusted, ref)
    return replace(pair, lr_fov=adjusted, color_corrected=True)


def _hr_patch_size(patch: int):
    q = patch * SCALE.numerator
    if q % SCALE.denominator:
        raise InvalidInputError(f"patch size {patch} is not a multiple of 9")
    return q // SCALE.denominator


def refine_patch_alignment(pair: RegisteredPair, patch_origin,
                           cfg: RegistrationConfig = RegistrationConfig()) -> PatchPair:
    """Re-estimate the homography between one LR patch and its HR region.

    Falls back to the global FOV transform when local estimation fails; the
    NCC gate downstream decides whether the pair survives.
    """
    top, left = patch_origin
    p = cfg.patch
    if top % cfg.stride or left % cfg.stride \
            or top + p > pair.lr_fov.height or left + p > pair.lr_fov.width:
        raise InvalidInputError(f"patch origin {patch_origin} off the stride grid")
    q = _hr_patch_size(p)
    lr_patch = crop(pair.lr_fov, (top, left, p, p))
    up = resize_bicubic(lr_patch, q, q)
    # upsampled-patch coords -> lr_fov coords -> hr coords
    s = p / q
    up_to_fov = _affine(s, s, left + 0.5 * s - 0.5, top + 0.5 * s - 0.5)
    global_h = pair.fov_homography.compose(up_to_fov)

    corners = np.array([[0.0, 0.0], [q - 1.0, 0.0], [q - 1.0, q - 1.0], [0.0, q - 1.0]])
    proj = apply_homography(global_h, corners)
    m = cfg.refine_margin_px
    rx0 = int(np.floor(proj[:, 0].min())) - m
    ry0 = int(np.floor(proj[:, 1].min())) - m
    rx1 = int(np.ceil(proj[:, 0].max())) + m + 1
    ry1 = int(np.ceil(proj[:, 1].max())) + m + 1
    # overhang beyond the HR frame is filled by symmetric extension so that
    # border patches keep plausible statistics for the NCC gate
    region = crop_padded(pair.hr, (ry0, rx0, ry1 - ry0, rx1 - rx0))
    to_region = _affine(1.0, 1.0, -rx0, -ry0)

    local_h, fallback, residual = global_h, True, float("nan")
    try:
        kps_up, desc_up = detect_and_describe(_luma(up), cfg.patch_sift)
        kps_r, desc_r = detect_and_describe(_luma(region), cfg.patch_sift)
        matches = match_descriptors(desc_up, desc_r)
        if len(matches) >= cfg.min_local_matches:
            src = np.array([[kps_up[mm.src_idx].x, kps_up[mm.src_idx].y] for mm in matches])
            dst = np.array([[kps_r[mm.dst_idx].x, kps_r[mm.dst_idx].y] for mm in matches])
            h, mask = ransac_homography(src, dst, cfg.ransac_thresh_px,
                                        cfg.ransac_iters, cfg.seed)
            cand = _affine(1.0, 1.0, rx0, ry0).compose(h)
            dev = np.abs(apply_homography(cand, corners) - proj).max()
            if mask.sum() >= cfg.min_local_matches and dev <= 2 * m:
                local_h, fallback = cand, False
                residual = float(symmetric_transfer_error(h, src[mask], dst[mask]).mean())
    except (InvalidInputError, EstimationFailureError):
        pass

    hr_patch, _cov = warp_image(region, to_region.compose(local_h).inverse(), q, q)
    return PatchPair(lr_patch=lr_patch, hr_patch=hr_patch, local_homography=local_h,
                     origin=(top, left), fallback=fallback, residual_px=residual)


def validate_pair(pp: PatchPair, ncc_thresh: float = 0.9) -> PatchPair:
    """NCC gate on luminance between the bicubic-upsampled LR patch and the HR patch."""
    up = resize_bicubic(pp.lr_patch, pp.hr_patch.height, pp.hr_patch.width)
    try:
        value = ncc_metric(_luma(up), _luma(pp.hr_patch))
    except UndefinedCorrelationError:
        value = 0.0
    return replace(pp, ncc=value, valid=value >= ncc_thresh)


def extract_patches(pair: RegisteredPair, cfg: RegistrationConfig = RegistrationConfig()):
    """Non-overlapping patch grid over the FOV, each refined and NCC-validated.

    Deterministic raster order (top-to-bottom, left-to-right)."""
    out = []
    for top in range(0, pair.lr_fov.height - cfg.patch + 1, cfg.stride):
        for left in range(0, pair.lr_fov.width - cfg.patch + 1, cfg.stride):
            pp = refine_patch_alignment(pair, (top, left), cfg)
            out.append(validate_pair(pp, cfg.ncc_thresh))
    return out


def scale_homography_to_packed(h: Homography) -> Homography:
    """Conjugate an RGB-coordinate transform onto the half-resolution packed grid.

    Packed pixel j spans RGB pixels (2j, 2j+1); its center is RGB coord 2j+0.5,
    so packed = (rgb - 0.5) / 2 on both axes."""
    s = np.array([[0.5, 0.0, -0.25], [0.0, 0.5, -0.25], [0.0, 0.0, 1.0]])
    return Homography(s @ h.matrix @ np.linalg.inv(s))


def register_raw(raw, pair: RegisteredPair, cfg: RegistrationConfig = RegistrationConfig()):
    """Apply the FOV transform estimated on RGB to the packed RAW mosaic.

    Returns (packed FOV Image (4ch, fov/2), packed-grid fov->hr homography).
    Burst reuse: callers pass the first burst frame's `pair` for every frame."""
    if pair.fov_to_lr is None:
        raise InvalidInputError("pair carries no FOV->LR transform")
    packed = pack_bayer(raw)
    fov_h, fov_w = pair.lr_fov.height, pair.lr_fov.width
    if fov_h % 2 or fov_w % 2:
        raise InvalidInputError("FOV dimensions must be even for packed RAW")
    # packed-FOV grid -> packed-LR grid; resample the mosaic there
    a_packed = scale_homography_to_packed(pair.fov_to_lr)
    packed_fov, _cov = warp_image(packed, a_packed.inverse(), fov_h // 2, fov_w // 2)
    return packed_fov, scale_homography_to_packed(pair.fov_homography)


def phase_correlation_shift(a: np.ndarray, b: np.ndarray):
    """Sub-pixel translation (dy, dx) aligning b to a, via windowed phase correlation."""
    if a.shape != b.shape:
        raise InvalidInputError("phase correlation needs equal shapes")
    hann = np.outer(np.hanning(a.shape[0]), np.hanning(a.shape[1]))
    fa = np.fft.fft2((a - a.mean()) * hann)
    fb = np.fft.fft2((b - b.mean()) * hann)
    cross = fa * np.conj(fb)
    mag = np.abs(cross)
    corr = np.fft.ifft2(cross / np.maximum(mag, 1e-12)).real
    peak = np.unravel_index(np.argmax(corr), corr.shape)
    out = []
    for axis, p in enumerate(peak):
        n = corr.shape[axis]
        idx = [peak[0], peak[1]]
        vals = []
        for d in (-1, 0, 1):
            idx[axis] = (p + d) % n
            vals.append(corr[tuple(idx)])
        denom = vals[0] - 2 * vals[1] + vals[2]
        frac = 0.5 * (vals[0] - vals[2]) / denom if abs(denom) > 1e-12 else 0.0
        shift = p + frac
        if shift > n / 2:
            shift -= n
        out.append(shift)
    return float(out[0]), float(out[1])


def error_map_report(pp: PatchPair):
    """Per-pixel absolute error map plus an edge-concentration summary.

    Returns (1-channel Image, dict with edge_concentration, misalignment_px,
    misaligned flag)."""
    from scipy import ndimage
    up = resize_bicubic(pp.lr_patch, pp.hr_patch.height, pp.hr_patch.width)
    err = np.abs(pp.hr_patch.data - up.data).mean(axis=0)
    y = _luma(pp.hr_patch).data[0]
    gx = ndimage.sobel(y, axis=1)
    gy = ndimage.sobel(y, axis=0)
    grad = np.hypot(gx, gy)
    thresh = np.percentile(grad, 75)
    edge = grad > max(thresh, 1e-9)
    near_edge = ndimage.binary_dilation(edge, iterations=3)
    total = err.sum()
    concentration = float(err[near_edge].sum() / total) if total > 1e-12 else 0.0
    dy, dx = phase_correlation_shift(y, _luma(up).data[0])
    shift = float(np.hypot(dy, dx))
    summary = {
        "edge_concentration": concentration,
        "misalignment_px": shift,
        "misaligned": shift > 1.0,
        "mean_abs_error": float(err.mean()),
    }
    scale = err.max()
    vis = err / scale if scale > 1e-12 else err
    return Image(vis[None]), summary


def load_manifest(path):
    """JSON-lines manifest, one ScenePair per line. Errors name the line."""
    scenes = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                scenes.append(ScenePair(
                    scene_id=str(rec["scene_id"]),
                    altitude=int(rec["altitude"]),
                    hr_path=rec["hr_path"],
                    lr_burst_paths=tuple(rec["lr_burst_paths"]),
                    split=rec["split"],
                    raw_paths=tuple(rec.get("raw_paths", ()))))
            except (KeyError, ValueError, InvalidInputError) as e:
                raise InvalidInputError(f"{path}:{lineno}: {e}") from e
    return scenes


def save_pair_outputs(out_dir, scene: ScenePair, pair: RegisteredPair, patches):
    """Write `<out>/<split>/<scene_id>/<altitude>/{lr,hr,meta}_XXX` per patch."""
    from .imgio import write_image
    base = Path(out_dir) / scene.split / scene.scene_id / str(scene.altitude)
    base.mkdir(parents=True, exist_ok=True)
    for i, pp in enumerate(patches):
        write_image(base / f"lr_{i:03d}.png", pp.lr_patch)
        write_image(base / f"hr_{i:03d}.png", pp.hr_patch)
        meta = {
            "scene_id": scene.scene_id,
            "altitude": scene.altitude,
            "split": scene.split,
            "origin": list(pp.origin),
            "fov_homography": pair.fov_homography.to_flat(),
            "local_homography": pp.local_homography.to_flat(),
            "ncc": pp.ncc,
            "valid": pp.valid,
            "fallback": pp.fallback,
        }
        (base / f"meta_{i:03d}.json").write_text(json.dumps(meta, indent=1))
