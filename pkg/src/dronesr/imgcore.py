"""Core raster types, color conversion, and resampling.

Conventions used everywhere in this package:
  * planar float64 rasters of shape (channels, height, width), values in [0,1]
  * half-pixel centers for all resamplers
  * bicubic = the a=-0.5 cubic with antialias widening on downscale
    (MATLAB imresize convention), symmetric edge handling
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

BAYER_PATTERNS = ("RGGB", "BGGR", "GRBG", "GBRG")

# BT.601 studio-range luma coefficients (the SR-evaluation convention)
_Y_COEF = np.array([65.481, 128.553, 24.966])
_Y_OFFSET = 16.0


@dataclass(frozen=True)
class Image:
    """Planar raster: data has shape (channels, height, width), values in [0,1]."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim == 2:
            d = d[None]
        if d.ndim != 3 or d.shape[0] not in (1, 3, 4):
            raise InvalidInputError(f"expected (c,h,w) raster with 1/3/4 channels, got shape {d.shape}")
        if d.shape[1] < 1 or d.shape[2] < 1:
            raise InvalidInputError(f"empty raster: shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise InvalidInputError("raster contains non-finite values")
        object.__setattr__(self, "data", d)

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]


@dataclass(frozen=True)
class BayerRaw:
    """Single-channel 16-bit mosaic with even dimensions."""

    data: np.ndarray  # (h, w) uint16
    pattern: str = "RGGB"
    black_level: int = 0  # stored as metadata only, never applied

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 2:
            raise InvalidInputError(f"raw mosaic must be 2-D, got shape {d.shape}")
        if d.shape[0] % 2 or d.shape[1] % 2:
            raise InvalidInputError(f"raw dimensions must be even, got {d.shape}")
        if self.pattern not in BAYER_PATTERNS:
            raise InvalidInputError(f"unknown Bayer pattern {self.pattern!r}")
        object.__setattr__(self, "data", d.astype(np.uint16))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


def rgb_to_y(img: Image) -> Image:
    """BT.601 studio-range luma: Y = (65.481 R + 128.553 G + 24.966 B + 16)/255."""
    if img.channels != 3:
        raise InvalidInputError(f"rgb_to_y needs 3 channels, got {img.channels}")
    y = (np.tensordot(_Y_COEF, img.data, axes=1) + _Y_OFFSET) / 255.0
    return Image(y[None])


def cubic_kernel(x, scale=1.0):
    """Keys cubic (a=-0.5), widened by `scale` (<1) for antialiased downscaling."""
    x = np.abs(np.asarray(x, dtype=np.float64)) * scale
    w = np.where(
        x <= 1.0,
        1.5 * x**3 - 2.5 * x**2 + 1.0,
        np.where(x < 2.0, -0.5 * x**3 + 2.5 * x**2 - 4.0 * x + 2.0, 0.0),
    )
    return w * scale


def _fold_symmetric(idx, n):
    """Map out-of-range indices into [0,n) by symmetric (edge-repeating) reflection."""
    idx = np.asarray(idx)
    period = 2 * n
    idx = np.mod(idx, period)
    idx = np.where(idx < 0, idx + period, idx)
    return np.where(idx >= n, period - 1 - idx, idx)


def resample_weights(in_len, out_len, antialias=True):
    """Per-output-pixel source indices and normalized cubic weights for one axis.

    Returns (idx, w) with shape (out_len, taps); rows sum to 1.
    """
    scale = out_len / in_len
    kscale = scale if (antialias and scale < 1.0) else 1.0
    support = 2.0 / kscale
    u = (np.arange(out_len) + 0.5) / scale - 0.5
    left = np.floor(u - support).astype(np.int64) + 1
    taps = int(np.ceil(2 * support)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = cubic_kernel(u[:, None] - idx, kscale)
    w /= w.sum(axis=1, keepdims=True)
    return _fold_symmetric(idx, in_len), w


def _dense_matrix(in_len, out_len, antialias):
    idx, w = resample_weights(in_len, out_len, antialias)
    mat = np.zeros((out_len, in_len))
    np.add.at(mat, (np.arange(out_len)[:, None], idx), w)
    return mat


def resize_bicubic(img: Image, out_h: int, out_w: int, antialias: bool = True) -> Image:
    """Separable a=-0.5 cubic resampling with antialiasing on downscale."""
    if out_h < 1 or out_w < 1:
        raise InvalidInputError(f"output size must be positive, got {out_h}x{out_w}")
    if (out_h, out_w) == (img.height, img.width):
        return img
    d = img.data
    if out_h != img.height:
        mh = _dense_matrix(img.height, out_h, antialias)
        d = np.einsum("oh,chw->cow", mh, d, optimize=True)
    if out_w != img.width:
        mw = _dense_matrix(img.width, out_w, antialias)
        d = np.einsum("ow,chw->cho", mw, d, optimize=True)
    return Image(np.clip(d, 0.0, 1.0))


def nearest_indices(in_len, out_len):
    """Half-pixel-center nearest-neighbor source index per output pixel."""
    src = np.floor((np.arange(out_len) + 0.5) * in_len / out_len).astype(np.int64)
    return np.clip(src, 0, in_len - 1)


def resize_nearest(img: Image, out_h: int, out_w: int) -> Image:
    """Nearest-neighbor resize; output pixels are exact copies of source pixels."""
    if out_h < 1 or out_w < 1:
        raise InvalidInputError(f"output size must be positive, got {out_h}x{out_w}")
    iy = nearest_indices(img.height, out_h)
    ix = nearest_indices(img.width, out_w)
    return Image(img.data[:, iy[:, None], ix[None, :]])


def pack_bayer(raw: BayerRaw) -> Image:
    """Stack each 2x2 mosaic block along channels: (TL, TR, BL, BR), scaled by 1/65535."""
    d = raw.data.astype(np.float64) / 65535.0
    return Image(np.stack([d[0::2, 0::2], d[0::2, 1::2], d[1::2, 0::2], d[1::2, 1::2]]))


def unpack_bayer(img: Image, pattern: str = "RGGB") -> BayerRaw:
    """Inverse of pack_bayer; bit-exact for data that came from a 16-bit mosaic."""
    if img.channels != 4:
        raise InvalidInputError(f"unpack_bayer needs 4 channels, got {img.channels}")
    h, w = img.height * 2, img.width * 2
    out = np.empty((h, w), dtype=np.uint16)
    vals = np.round(img.data * 65535.0).astype(np.uint16)
    out[0::2, 0::2] = vals[0]
    out[0::2, 1::2] = vals[1]
    out[1::2, 0::2] = vals[2]
    out[1::2, 1::2] = vals[3]
    return BayerRaw(out, pattern=pattern)


def crop(img: Image, rect) -> Image:
    """Exact sub-raster. rect = (top, left, height, width)."""
    top, left, h, w = (int(v) for v in rect)
    if h < 1 or w < 1 or top < 0 or left < 0 or top + h > img.height or left + w > img.width:
        raise InvalidInputError(f"crop rect {rect} outside {img.height}x{img.width}")
    return Image(img.data[:, top:top + h, left:left + w])


def crop_padded(img: Image, rect) -> Image:
    """Crop a rect that may overhang the raster; overhang is filled by
    symmetric extension. rect = (top, left, height, width)."""
    top, left, h, w = (int(v) for v in rect)
    if h < 1 or w < 1:
        raise InvalidInputError(f"empty crop rect {rect}")
    t0, l0 = max(top, 0), max(left, 0)
    b0, r0 = min(top + h, img.height), min(left + w, img.width)
    if b0 <= t0 or r0 <= l0:
        raise InvalidInputError(f"crop rect {rect} entirely outside raster")
    inner = img.data[:, t0:b0, l0:r0]
    pads = ((0, 0), (t0 - top, top + h - b0), (l0 - left, left + w - r0))
    if any(p != (0, 0) for p in pads[1:]):
        inner = np.pad(inner, pads, mode="symmetric")
    return Image(inner)


def pad(img: Image, margins, mode: str = "symmetric") -> Image:
    """Pad by (top, bottom, left, right) margins with reflected borders."""
    top, bottom, left, right = (int(v) for v in margins)
    if min(top, bottom, left, right) < 0:
        raise InvalidInputError(f"negative pad margins {margins}")
    if top == bottom == left == right == 0:
        return img
    return Image(np.pad(img.data, ((0, 0), (top, bottom), (left, right)), mode=mode))
