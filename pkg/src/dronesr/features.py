"""Scale-invariant keypoint detection, description, and matching.

Difference-of-Gaussians detector with sub-pixel refinement, gradient
orientation histograms, and 4x4x8 descriptors (normalize, clip at 0.2,
renormalize). Deterministic: fixed processing order, results sorted by
(response desc, y, x).
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .accel import NUMBA_ENABLED, njit
from .errors import InvalidInputError
from .imgcore import Image

_DEG2RAD = math.pi / 180.0


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    orientation: float  # radians
    response: float
    # detector-internal coordinates, needed to describe on the right pyramid level
    octave: int = 0
    layer: int = 0
    x_oct: float = 0.0
    y_oct: float = 0.0


@dataclass(frozen=True)
class Match:
    src_idx: int
    dst_idx: int
    distance: float


@dataclass(frozen=True)
class SiftParams:
    n_octave_layers: int = 3
    contrast_thresh: float = 0.03
    edge_ratio: float = 10.0
    sigma0: float = 1.6
    assumed_blur: float = 0.5
    max_keypoints: int = 5000
    max_octaves: int = 8
    border: int = 8


def build_pyramid(lum: np.ndarray, params: SiftParams):
    """Gaussian pyramid: one (layers+3, h, w) float32 stack per octave."""
    base = lum.astype(np.float32)
    sigma_diff = math.sqrt(max(params.sigma0**2 - params.assumed_blur**2, 0.01))
    base = ndimage.gaussian_filter(base, sigma_diff)
    k = 2.0 ** (1.0 / params.n_octave_layers)
    n_levels = params.n_octave_layers + 3
    sig_prev = params.sigma0
    increments = []
    for i in range(1, n_levels):
        sig_total = params.sigma0 * k**i
        increments.append(math.sqrt(sig_total**2 - sig_prev**2))
        sig_prev = sig_total
    n_octaves = int(math.log2(min(base.shape) / (2 * params.border + 2))) + 1
    n_octaves = max(1, min(n_octaves, params.max_octaves))
    octaves = []
    for _ in range(n_octaves):
        levels = [base]
        for inc in increments:
            levels.append(ndimage.gaussian_filter(levels[-1], inc))
        octaves.append(np.stack(levels))
        base = levels[params.n_octave_layers][::2, ::2]
        if min(base.shape) < 2 * params.border + 2:
            break
    return octaves


@njit
def _scan_extrema_numba(dog, thresh, border):
    n_levels, h, w = dog.shape
    ls, ys, xs = [], [], []
    for l in range(1, n_levels - 1):
        for y in range(border, h - border):
            for x in range(border, w - border):
                v = dog[l, y, x]
                if v <= thresh and v >= -thresh:
                    continue
                is_max = True
                is_min = True
                for dl in range(-1, 2):
                    for dy in range(-1, 2):
                        for dx in range(-1, 2):
                            if dl == 0 and dy == 0 and dx == 0:
                                continue
                            nb = dog[l + dl, y + dy, x + dx]
                            if nb >= v:
                                is_max = False
                            if nb <= v:
                                is_min = False
                    if not (is_max or is_min):
                        break
                if is_max or is_min:
                    ls.append(l)
                    ys.append(y)
                    xs.append(x)
    return np.array(ls, dtype=np.int64), np.array(ys, dtype=np.int64), np.array(xs, dtype=np.int64)


def _scan_extrema_numpy(dog, thresh, border):
    mx = ndimage.maximum_filter(dog, size=3, mode="constant", cval=np.inf)
    mn = ndimage.minimum_filter(dog, size=3, mode="constant", cval=-np.inf)
    mask = ((dog >= mx) & (dog > thresh)) | ((dog <= mn) & (dog < -thresh))
    mask[0] = mask[-1] = False
    mask[:, :border] = mask[:, -border:] = False
    mask[:, :, :border] = mask[:, :, -border:] = False
    ls, ys, xs = np.nonzero(mask)
    return ls, ys, xs


scan_extrema = _scan_extrema_numba if NUMBA_ENABLED else _scan_extrema_numpy


def _refine_extrema(dog, ls, ys, xs, params):
    """Vectorized iterative 3-D quadratic refinement of candidate extrema.

    Returns arrays (l, y, x, off_l, off_y, off_x, response) for survivors.
    """
    n_levels, h, w = dog.shape
    border = params.border
    ls, ys, xs = ls.copy(), ys.copy(), xs.copy()
    alive = np.ones(ls.shape[0], dtype=bool)
    off = np.zeros((ls.shape[0], 3))
    grad_center = np.zeros(ls.shape[0])
    converged = np.zeros(ls.shape[0], dtype=bool)
    for _ in range(5):
        act = alive & ~converged
        if not act.any():
            break
        l, y, x = ls[act], ys[act], xs[act]
        v = dog[l, y, x]
        dx = 0.5 * (dog[l, y, x + 1] - dog[l, y, x - 1])
        dy = 0.5 * (dog[l, y + 1, x] - dog[l, y - 1, x])
        dl = 0.5 * (dog[l + 1, y, x] - dog[l - 1, y, x])
        dxx = dog[l, y, x + 1] + dog[l, y, x - 1] - 2 * v
        dyy = dog[l, y + 1, x] + dog[l, y - 1, x] - 2 * v
        dll = dog[l + 1, y, x] + dog[l - 1, y, x] - 2 * v
        dxy = 0.25 * (dog[l, y + 1, x + 1] - dog[l, y + 1, x - 1]
                      - dog[l, y - 1, x + 1] + dog[l, y - 1, x - 1])
        dxl = 0.25 * (dog[l + 1, y, x + 1] - dog[l + 1, y, x - 1]
                      - dog[l - 1, y, x + 1] + dog[l - 1, y, x - 1])
        dyl = 0.25 * (dog[l + 1, y + 1, x] - dog[l + 1, y - 1, x]
                      - dog[l - 1, y + 1, x] + dog[l - 1, y - 1, x])
        hess = np.stack([
            np.stack([dxx, dxy, dxl], axis=-1),
            np.stack([dxy, dyy, dyl], axis=-1),
            np.stack([dxl, dyl, dll], axis=-1),
        ], axis=-2)
        grad = np.stack([dx, dy, dl], axis=-1)
        det = np.linalg.det(hess)
        ok = np.abs(det) > 1e-30
        step = np.zeros_like(grad)
        if ok.any():
            step[ok] = -np.linalg.solve(hess[ok], grad[ok][..., None])[..., 0]
        idx = np.nonzero(act)[0]
        alive[idx[~ok]] = False
        idx, step, grad, v = idx[ok], step[ok], grad[ok], v[ok]
        done = np.all(np.abs(step) < 0.5, axis=1)
        off[idx[done]] = step[done]
        grad_center[idx[done]] = (grad[done] * step[done]).sum(axis=1)
        converged[idx[done]] = True
        # value stored pre-offset; recomputed for converged ones above
        mv = ~done
        xs[idx[mv]] += np.round(step[mv, 0]).astype(np.int64)
        ys[idx[mv]] += np.round(step[mv, 1]).astype(np.int64)
        ls[idx[mv]] += np.round(step[mv, 2]).astype(np.int64)
        bad = ((ls[idx[mv]] < 1) | (ls[idx[mv]] > n_levels - 2)
               | (ys[idx[mv]] < border) | (ys[idx[mv]] > h - border - 1)
               | (xs[idx[mv]] < border) | (xs[idx[mv]] > w - border - 1))
        alive[idx[mv][bad]] = False
    keep = alive & converged
    l, y, x = ls[keep], ys[keep], xs[keep]
    response = dog[l, y, x] + 0.5 * grad_center[keep]
    # contrast gate
    good = np.abs(response) * params.n_octave_layers >= params.contrast_thresh
    # edge gate: 2-D principal curvature ratio at the refined integer location
    v = dog[l, y, x]
    dxx = dog[l, y, x + 1] + dog[l, y, x - 1] - 2 * v
    dyy = dog[l, y + 1, x] + dog[l, y - 1, x] - 2 * v
    dxy = 0.25 * (dog[l, y + 1, x + 1] - dog[l, y + 1, x - 1]
                  - dog[l, y - 1, x + 1] + dog[l, y - 1, x - 1])
    tr = dxx + dyy
    det2 = dxx * dyy - dxy * dxy
    r = params.edge_ratio
    good &= (det2 > 0) & (tr * tr * r < (r + 1) ** 2 * det2)
    return l[good], y[good], x[good], off[keep][good], response[good]


@njit
def _orient_hist_numba(gauss_level, x, y, scale_oct, y0, y1, x0, x1):
    hist = np.zeros(36)
    sig2 = 2.0 * (1.5 * scale_oct) ** 2
    for r in range(y0, y1 + 1):
        for c in range(x0, x1 + 1):
            gx = gauss_level[r, c + 1] - gauss_level[r, c - 1]
            gy = gauss_level[r - 1, c] - gauss_level[r + 1, c]
            mag = math.sqrt(gx * gx + gy * gy)
            ori = math.degrees(math.atan2(gy, gx)) % 360.0
            wgt = math.exp(-((r - y) ** 2 + (c - x) ** 2) / sig2)
            hist[int(round(ori * 36.0 / 360.0)) % 36] += mag * wgt
    return hist


def _orient_hist_numpy(gauss_level, x, y, scale_oct, y0, y1, x0, x1):
    win = gauss_level[y0 - 1:y1 + 2, x0 - 1:x1 + 2]
    gx = win[1:-1, 2:] - win[1:-1, :-2]
    gy = win[:-2, 1:-1] - win[2:, 1:-1]
    mag = np.sqrt(gx * gx + gy * gy)
    ori = np.rad2deg(np.arctan2(gy, gx)) % 360.0
    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    wgt = np.exp(-((yy - y) ** 2 + (xx - x) ** 2) / (2 * (1.5 * scale_oct) ** 2))
    hist = np.zeros(36)
    bins = np.round(ori * 36.0 / 360.0).astype(np.int64) % 36
    np.add.at(hist, bins.ravel(), (mag * wgt).ravel())
    return hist


_orient_hist = _orient_hist_numba if NUMBA_ENABLED else _orient_hist_numpy


def _orientations(gauss_level, x, y, scale_oct):
    """Dominant gradient orientations (degrees) at one keypoint; may return several."""
    h, w = gauss_level.shape
    radius = int(round(3.0 * 1.5 * scale_oct))
    cx, cy = int(round(x)), int(round(y))
    y0, y1 = max(cy - radius, 1), min(cy + radius, h - 2)
    x0, x1 = max(cx - radius, 1), min(cx + radius, w - 2)
    if y1 <= y0 or x1 <= x0:
        return []
    hist = _orient_hist(gauss_level, float(x), float(y), float(scale_oct),
                        y0, y1, x0, x1)
    ext = np.concatenate([hist[-2:], hist, hist[:2]])  # circular padding
    smooth = (6 * ext[2:-2] + 4 * (ext[1:-3] + ext[3:-1]) + ext[:-4] + ext[4:]) / 16.0
    peak = smooth.max()
    if peak <= 0:
        return []
    out = []
    ext2 = np.concatenate([smooth[-1:], smooth, smooth[:1]])
    left = ext2[:-2]
    right = ext2[2:]
    for i in np.nonzero((smooth > left) & (smooth > right) & (smooth >= 0.8 * peak))[0]:
        denom = left[i] - 2 * smooth[i] + right[i]
        interp = i + (0.5 * (left[i] - right[i]) / denom if abs(denom) > 1e-12 else 0.0)
        out.append((interp % 36.0) * 10.0)
    return out


def detect_keypoints(img: Image, params: SiftParams = SiftParams(), _pyramid=None):
    """DoG scale-space extrema with sub-pixel refinement and contrast/edge gates."""
    if img.channels != 1:
        raise InvalidInputError("detector expects a single-channel image")
    if img.height < 32 or img.width < 32:
        raise InvalidInputError(f"image too small for detection: {img.height}x{img.width}")
    octaves = _pyramid if _pyramid is not None else build_pyramid(img.data[0], params)
    prelim = np.float32(0.5 * params.contrast_thresh / params.n_octave_layers)
    cands = []  # (|response|, octave, layer, x_oct, y_oct, scale)
    for oct_idx, gauss in enumerate(octaves):
        dog = (gauss[1:] - gauss[:-1]).astype(np.float32)
        ls, ys, xs = scan_extrema(dog, prelim, params.border)
        if len(ls) == 0:
            continue
        l, y, x, off, resp = _refine_extrema(dog.astype(np.float64), ls, ys, xs, params)
        for i in range(l.shape[0]):
            scale = params.sigma0 * 2.0 ** ((l[i] + off[i, 2]) / params.n_octave_layers)
            cands.append((abs(float(resp[i])), oct_idx, int(l[i]),
                          x[i] + off[i, 0], y[i] + off[i, 1], scale))
    # orientation assignment is the expensive per-candidate step; retain only
    # the strongest responses first (the same cap applies again afterwards,
    # since a candidate can yield several oriented keypoints)
    cands.sort(key=lambda c: (-c[0], c[4], c[3], c[5]))
    kps = []
    for resp, oct_idx, layer, x_oct, y_oct, scale in cands[:params.max_keypoints]:
        factor = float(2**oct_idx)
        for ang in _orientations(octaves[oct_idx][layer], x_oct, y_oct, scale):
            kps.append(Keypoint(
                x=x_oct * factor, y=y_oct * factor,
                scale=scale * factor,
                orientation=(ang * _DEG2RAD) % (2 * math.pi),
                response=resp,
                octave=oct_idx, layer=layer, x_oct=x_oct, y_oct=y_oct))
    kps.sort(key=lambda k: (-k.response, k.y, k.x, k.scale, k.orientation))
    return kps[:params.max_keypoints]


@njit
def _describe_numba(gauss_level, x, y, scale_oct, angle_deg):
    h, w = gauss_level.shape
    n_bins = 8
    width = 4
    hist_width = 3.0 * scale_oct
    radius = int(round(hist_width * math.sqrt(2.0) * (width + 1) * 0.5))
    cos_a = math.cos(math.radians(-angle_deg))
    sin_a = math.sin(math.radians(-angle_deg))
    weight_mult = -0.5 / ((0.5 * width) ** 2)
    bins_per_deg = n_bins / 360.0
    hist = np.zeros((width + 2, width + 2, n_bins))
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            r_rot = dc * sin_a + dr * cos_a
            c_rot = dc * cos_a - dr * sin_a
            row_bin = r_rot / hist_width + 0.5 * width - 0.5
            col_bin = c_rot / hist_width + 0.5 * width - 0.5
            if row_bin <= -1.0 or row_bin >= width or col_bin <= -1.0 or col_bin >= width:
                continue
            r = int(round(y)) + dr
            c = int(round(x)) + dc
            if r < 1 or r > h - 2 or c < 1 or c > w - 2:
                continue
            gx = gauss_level[r, c + 1] - gauss_level[r, c - 1]
            gy = gauss_level[r - 1, c] - gauss_level[r + 1, c]
            mag = math.sqrt(gx * gx + gy * gy)
            ori = math.degrees(math.atan2(gy, gx)) % 360.0
            wgt = math.exp(weight_mult * ((r_rot / hist_width) ** 2 + (c_rot / hist_width) ** 2))
            val = wgt * mag
            ori_bin = ((ori - angle_deg) % 360.0) * bins_per_deg
            r0 = int(math.floor(row_bin))
            c0 = int(math.floor(col_bin))
            o0 = int(math.floor(ori_bin))
            fr = row_bin - r0
            fc = col_bin - c0
            fo = ori_bin - o0
            for ir in range(2):
                wr = val * (fr if ir else 1.0 - fr)
                rr = r0 + 1 + ir
                if rr < 0 or rr >= width + 2:
                    continue
                for ic in range(2):
                    wc = wr * (fc if ic else 1.0 - fc)
                    cc = c0 + 1 + ic
                    if cc < 0 or cc >= width + 2:
                        continue
                    for io in range(2):
                        wo = wc * (fo if io else 1.0 - fo)
                        hist[rr, cc, (o0 + io) % n_bins] += wo
    return hist[1:width + 1, 1:width + 1].copy().reshape(width * width * n_bins)


def _describe_numpy(gauss_level, x, y, scale_oct, angle_deg):
    h, w = gauss_level.shape
    n_bins, width = 8, 4
    hist_width = 3.0 * scale_oct
    radius = int(round(hist_width * math.sqrt(2.0) * (width + 1) * 0.5))
    cos_a = math.cos(math.radians(-angle_deg))
    sin_a = math.sin(math.radians(-angle_deg))
    weight_mult = -0.5 / ((0.5 * width) ** 2)
    dr, dc = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    r_rot = dc * sin_a + dr * cos_a
    c_rot = dc * cos_a - dr * sin_a
    row_bin = r_rot / hist_width + 0.5 * width - 0.5
    col_bin = c_rot / hist_width + 0.5 * width - 0.5
    r = int(round(y)) + dr
    c = int(round(x)) + dc
    ok = ((row_bin > -1) & (row_bin < width) & (col_bin > -1) & (col_bin < width)
          & (r >= 1) & (r <= h - 2) & (c >= 1) & (c <= w - 2))
    row_bin, col_bin, r, c = row_bin[ok], col_bin[ok], r[ok], c[ok]
    r_rot, c_rot = r_rot[ok], c_rot[ok]
    gx = gauss_level[r, c + 1] - gauss_level[r, c - 1]
    gy = gauss_level[r - 1, c] - gauss_level[r + 1, c]
    mag = np.sqrt(gx * gx + gy * gy)
    ori = np.degrees(np.arctan2(gy, gx)) % 360.0
    val = np.exp(weight_mult * ((r_rot / hist_width) ** 2 + (c_rot / hist_width) ** 2)) * mag
    ori_bin = ((ori - angle_deg) % 360.0) * (n_bins / 360.0)
    r0 = np.floor(row_bin).astype(np.int64)
    c0 = np.floor(col_bin).astype(np.int64)
    o0 = np.floor(ori_bin).astype(np.int64)
    fr, fc, fo = row_bin - r0, col_bin - c0, ori_bin - o0
    hist = np.zeros((width + 2, width + 2, n_bins))
    for ir in range(2):
        wr = val * (fr if ir else 1.0 - fr)
        rr = r0 + 1 + ir
        for ic in range(2):
            wc = wr * (fc if ic else 1.0 - fc)
            cc = c0 + 1 + ic
            for io in range(2):
                wo = wc * (fo if io else 1.0 - fo)
                oo = (o0 + io) % n_bins
                sel = (rr >= 0) & (rr < width + 2) & (cc >= 0) & (cc < width + 2)
                np.add.at(hist, (rr[sel], cc[sel], oo[sel]), wo[sel])
    return hist[1:width + 1, 1:width + 1].reshape(width * width * n_bins)


_describe_one = _describe_numba if NUMBA_ENABLED else _describe_numpy


def _finalize_descriptor(vec):
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        return None
    vec = np.minimum(vec / norm, 0.2)
    norm = np.linalg.norm(vec)
    return vec / norm


def compute_descriptors(img: Image, kps, params: SiftParams = SiftParams(),
                        _pyramid=None):
    """128-D descriptors for keypoints; returns (array (n,128), kept index list).

    Keypoints whose window degenerates (empty gradient support) are skipped and
    reported via the kept-index list.
    """
    if img.channels != 1:
        raise InvalidInputError("descriptors expect a single-channel image")
    octaves = _pyramid if _pyramid is not None else build_pyramid(img.data[0], params)
    level_cache = {}  # float64 copies of the pyramid levels actually used
    descs, kept = [], []
    for i, kp in enumerate(kps):
        key = (kp.octave, kp.layer)
        gauss = level_cache.get(key)
        if gauss is None:
            gauss = level_cache[key] = octaves[kp.octave][kp.layer].astype(np.float64)
        scale_oct = kp.scale / 2.0**kp.octave
        vec = _describe_one(gauss, kp.x_oct, kp.y_oct,
                            scale_oct, math.degrees(kp.orientation))
        vec = _finalize_descriptor(np.asarray(vec))
        if vec is None:
            continue
        descs.append(vec)
        kept.append(i)
    if not descs:
        return np.zeros((0, 128)), []
    return np.stack(descs), kept


def detect_and_describe(lum: Image, params: SiftParams = SiftParams()):
    """Detect keypoints and describe them on a shared pyramid (single pass)."""
    pyr = build_pyramid(lum.data[0], params)
    kps = detect_keypoints(lum, params, _pyramid=pyr)
    descs, kept = compute_descriptors(lum, kps, params, _pyramid=pyr)
    return [kps[i] for i in kept], descs


def match_descriptors(src, dst, ratio: float = 0.75):
    """Lowe ratio test plus mutual-best filtering. Empty inputs yield no matches."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape[0] == 0 or dst.shape[0] == 0:
        return []
    if not 0.0 < ratio < 1.0:
        raise InvalidInputError(f"ratio must be in (0,1), got {ratio}")
    d2 = np.maximum(
        (src**2).sum(axis=1)[:, None] + (dst**2).sum(axis=1)[None, :]
        - 2.0 * src @ dst.T, 0.0)
    best_dst = np.argmin(d2, axis=0)  # per-dst best src
    matches = []
    for i in range(src.shape[0]):
        row = d2[i]
        if row.shape[0] == 1:
            j = 0
            if best_dst[j] == i:
                matches.append(Match(i, 0, float(math.sqrt(row[0]))))
            continue
        j, j2 = np.argpartition(row, 1)[:2]
        if row[j2] < row[j]:
            j, j2 = j2, j
        if row[j] < (ratio**2) * row[j2] and best_dst[j] == i:
            matches.append(Match(i, int(j), float(math.sqrt(row[j]))))
    return matches


def dump_keypoints_csv(path, kps):
    """Debug CSV: x,y,scale,orientation,response."""
    with open(path, "w") as f:
        f.write("x,y,scale,orientation,response\n")
        for kp in kps:
            f.write(f"{kp.x:.4f},{kp.y:.4f},{kp.scale:.4f},{kp.orientation:.6f},{kp.response:.6g}\n")
