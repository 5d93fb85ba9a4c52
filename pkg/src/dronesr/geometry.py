"""Homography estimation (normalized DLT inside RANSAC) and projective warping."""

from dataclasses import dataclass

import numpy as np

from .accel import NUMBA_ENABLED, njit
from .errors import EstimationFailureError, InvalidInputError, PointAtInfinityError
from .imgcore import Image


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform, normalized so m[2,2] = 1 when nonzero."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise InvalidInputError(f"homography must be 3x3, got {m.shape}")
        det = np.linalg.det(m)
        if not np.isfinite(det) or abs(det) < 1e-12:
            raise InvalidInputError("homography is not invertible")
        if abs(m[2, 2]) > 1e-12:
            m = m / m[2, 2]
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    def inverse(self):
        return Homography(np.linalg.inv(self.matrix))

    def compose(self, other: "Homography") -> "Homography":
        """self after other: (self @ other)(p) = self(other(p))."""
        return Homography(self.matrix @ other.matrix)

    def to_flat(self):
        return self.matrix.reshape(9).tolist()

    @classmethod
    def from_flat(cls, values):
        return cls(np.asarray(values, dtype=np.float64).reshape(3, 3))


def apply_homography(h: Homography, points):
    """Projective action on (..., 2) point arrays (x, y order)."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    m = h.matrix
    w = m[2, 0] * pts[:, 0] + m[2, 1] * pts[:, 1] + m[2, 2]
    if np.any(np.abs(w) < 1e-12):
        raise PointAtInfinityError("point mapped to infinity")
    x = (m[0, 0] * pts[:, 0] + m[0, 1] * pts[:, 1] + m[0, 2]) / w
    y = (m[1, 0] * pts[:, 0] + m[1, 1] * pts[:, 1] + m[1, 2]) / w
    out = np.stack([x, y], axis=-1)
    return out[0] if single else out


def _normalize_points(pts):
    """Hartley normalization: centroid at origin, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    d = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    if d < 1e-12:
        raise EstimationFailureError("degenerate point configuration (coincident points)")
    s = np.sqrt(2.0) / d
    t = np.array([[s, 0, -s * centroid[0]], [0, s, -s * centroid[1]], [0, 0, 1.0]])
    return t


def _minimal_sample_degenerate(pts):
    """True when any 3 of 4 points are (near-)collinear; such a minimal sample
    does not determine a homography even though the DLT system solves."""
    scale2 = max(np.ptp(pts, axis=0).max() ** 2, 1e-30)
    for skip in range(4):
        a, b, c = pts[[i for i in range(4) if i != skip]]
        area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(area2) < 1e-9 * scale2:
            return True
    return False


def estimate_homography_dlt(src, dst) -> Homography:
    """Hartley-normalized direct linear transform from >=4 correspondences."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[0] < 4 or src.shape[1] != 2:
        raise InvalidInputError(f"need matching (n>=4, 2) point arrays, got {src.shape} / {dst.shape}")
    if src.shape[0] == 4 and (_minimal_sample_degenerate(src)
                              or _minimal_sample_degenerate(dst)):
        raise EstimationFailureError("degenerate configuration (3 collinear points)")
    ts, td = _normalize_points(src), _normalize_points(dst)
    sn = apply_homography(Homography(ts), src)
    dn = apply_homography(Homography(td), dst)
    n = src.shape[0]
    a = np.zeros((2 * n, 9))
    x, y = sn[:, 0], sn[:, 1]
    u, v = dn[:, 0], dn[:, 1]
    a[0::2, 0], a[0::2, 1], a[0::2, 2] = -x, -y, -1.0
    a[0::2, 6], a[0::2, 7], a[0::2, 8] = u * x, u * y, u
    a[1::2, 3], a[1::2, 4], a[1::2, 5] = -x, -y, -1.0
    a[1::2, 6], a[1::2, 7], a[1::2, 8] = v * x, v * y, v
    _, sv, vt = np.linalg.svd(a)
    if sv[-2] < 1e-9 * max(sv[0], 1e-30):
        raise EstimationFailureError("degenerate configuration (rank-deficient DLT system)")
    hn = vt[-1].reshape(3, 3)
    m = np.linalg.inv(td) @ hn @ ts
    if abs(np.linalg.det(m)) < 1e-12:
        raise EstimationFailureError("DLT produced a singular homography")
    return Homography(m)


def symmetric_transfer_error(h: Homography, src, dst):
    """Per-correspondence forward + backward transfer distance (px)."""
    fwd = apply_homography(h, src) - dst
    bwd = apply_homography(h.inverse(), dst) - src
    return 0.5 * (np.sqrt((fwd ** 2).sum(axis=1)) + np.sqrt((bwd ** 2).sum(axis=1)))


def ransac_homography(src, dst, inlier_thresh_px: float = 3.0,
                      max_iters: int = 2000, seed: int = 0,
                      confidence: float = 0.99):
    """RANSAC over 4-point samples with symmetric transfer scoring and inlier refit.

    Returns (Homography, boolean inlier mask). Deterministic for a given seed.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = src.shape[0]
    if n < 4:
        raise InvalidInputError(f"need >=4 correspondences, got {n}")
    if inlier_thresh_px <= 0:
        raise InvalidInputError("inlier threshold must be positive")
    rng = np.random.default_rng(seed)

    best_mask = None
    best_count = 3
    best_err = np.inf
    iters = max_iters
    i = 0
    while i < iters:
        i += 1
        sample = rng.choice(n, size=4, replace=False)
        try:
            h = estimate_homography_dlt(src[sample], dst[sample])
        except EstimationFailureError:
            continue
        err = symmetric_transfer_error(h, src, dst)
        mask = err < inlier_thresh_px
        count = int(mask.sum())
        mean_err = err[mask].mean() if count else np.inf
        if count > best_count or (count == best_count and mean_err < best_err):
            best_mask = mask
            best_count = count
            best_err = mean_err
            # standard 99%-confidence early-termination update
            w = count / n
            if w > 0:
                denom = np.log1p(-min(w**4, 1 - 1e-12))
                iters = min(iters, int(np.ceil(np.log(1 - confidence) / denom)))
    if best_mask is None:
        raise EstimationFailureError("RANSAC found no model with >=4 inliers")
    h = estimate_homography_dlt(src[best_mask], dst[best_mask])
    # refit can move points across the threshold; report the refit's inliers
    final_mask = symmetric_transfer_error(h, src, dst) < inlier_thresh_px
    if final_mask.sum() >= 4:
        return h, final_mask
    return h, best_mask


@njit
def _warp_bilinear_numba(src, m, out_h, out_w):
    c, h, w = src.shape
    out = np.zeros((c, out_h, out_w), dtype=src.dtype)
    covered = 0
    for oy in range(out_h):
        for ox in range(out_w):
            d = m[2, 0] * ox + m[2, 1] * oy + m[2, 2]
            if abs(d) < 1e-12:
                continue
            sx = (m[0, 0] * ox + m[0, 1] * oy + m[0, 2]) / d
            sy = (m[1, 0] * ox + m[1, 1] * oy + m[1, 2]) / d
            if sx < 0.0 or sy < 0.0 or sx > w - 1.0 or sy > h - 1.0:
                continue
            x0 = int(np.floor(sx))
            y0 = int(np.floor(sy))
            x1 = min(x0 + 1, w - 1)
            y1 = min(y0 + 1, h - 1)
            fx = sx - x0
            fy = sy - y0
            covered += 1
            for ch in range(c):
                v0 = src[ch, y0, x0] * (1 - fx) + src[ch, y0, x1] * fx
                v1 = src[ch, y1, x0] * (1 - fx) + src[ch, y1, x1] * fx
                out[ch, oy, ox] = v0 * (1 - fy) + v1 * fy
    return out, covered


def _warp_bilinear_numpy(src, m, out_h, out_w):
    c, h, w = src.shape
    ox, oy = np.meshgrid(np.arange(out_w, dtype=np.float64),
                         np.arange(out_h, dtype=np.float64))
    d = m[2, 0] * ox + m[2, 1] * oy + m[2, 2]
    d = np.where(np.abs(d) < 1e-12, np.nan, d)
    sx = (m[0, 0] * ox + m[0, 1] * oy + m[0, 2]) / d
    sy = (m[1, 0] * ox + m[1, 1] * oy + m[1, 2]) / d
    valid = (sx >= 0) & (sy >= 0) & (sx <= w - 1) & (sy <= h - 1)
    sx = np.where(valid, sx, 0.0)
    sy = np.where(valid, sy, 0.0)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    v0 = src[:, y0, x0] * (1 - fx) + src[:, y0, x1] * fx
    v1 = src[:, y1, x0] * (1 - fx) + src[:, y1, x1] * fx
    out = (v0 * (1 - fy) + v1 * fy) * valid
    return out, int(valid.sum())


warp_bilinear = _warp_bilinear_numba if NUMBA_ENABLED else _warp_bilinear_numpy


def warp_image(img: Image, h: Homography, out_h: int, out_w: int):
    """Inverse-mapping warp: out(p) = img(h^-1 p), bilinear sampling.

    `h` maps source coordinates to output coordinates. Out-of-source pixels
    are 0; returns (Image, coverage fraction).
    """
    if out_h < 1 or out_w < 1:
        raise InvalidInputError(f"output size must be positive, got {out_h}x{out_w}")
    minv = np.ascontiguousarray(h.inverse().matrix)
    out, covered = warp_bilinear(np.ascontiguousarray(img.data), minv, out_h, out_w)
    return Image(np.clip(out, 0.0, 1.0)), covered / (out_h * out_w)
