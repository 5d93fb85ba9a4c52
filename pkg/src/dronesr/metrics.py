"""Evaluation protocol: PSNR and SSIM on the Y channel of YCbCr, plus NCC."""

import math
from typing import NamedTuple

import numpy as np
from scipy.signal import fftconvolve

from .errors import InvalidInputError, UndefinedCorrelationError
from .imgcore import Image, rgb_to_y

PSNR_CAP_DB = 100.0
DEFAULT_SHAVE = 6  # ceil(50/9), the RCAN-protocol border shave for this scale


class PsnrResult(NamedTuple):
    db: float
    exact_match: bool

    def __float__(self):
        return self.db


def _luma255(img: Image, quantize: bool):
    y = img.data[0] if img.channels == 1 else rgb_to_y(img).data[0]
    y = y * 255.0
    return np.round(y) if quantize else y


def _shave(arr, border):
    if border > 0:
        if 2 * border >= min(arr.shape):
            raise InvalidInputError(f"shave {border} leaves no pixels on {arr.shape}")
        arr = arr[border:-border, border:-border]
    return arr


def psnr_y(pred: Image, ref: Image, border_shave: int = DEFAULT_SHAVE,
           quantize: bool = False) -> PsnrResult:
    """PSNR on the Y channel, 0-255 range, border shaved on each side."""
    if pred.data.shape != ref.data.shape:
        raise InvalidInputError(f"shape mismatch: {pred.data.shape} vs {ref.data.shape}")
    a = _shave(_luma255(pred, quantize), border_shave)
    b = _shave(_luma255(ref, quantize), border_shave)
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PsnrResult(PSNR_CAP_DB, True)
    return PsnrResult(min(10.0 * math.log10(255.0**2 / mse), PSNR_CAP_DB), False)


def _gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    g = np.outer(g, g)
    return g / g.sum()


def ssim_y(pred: Image, ref: Image, border_shave: int = DEFAULT_SHAVE,
           quantize: bool = False) -> float:
    """Single-scale SSIM (11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03, L=255)."""
    if pred.data.shape != ref.data.shape:
        raise InvalidInputError(f"shape mismatch: {pred.data.shape} vs {ref.data.shape}")
    a = _shave(_luma255(pred, quantize), border_shave)
    b = _shave(_luma255(ref, quantize), border_shave)
    if min(a.shape) < 11:
        raise InvalidInputError(f"image too small for SSIM after shave: {a.shape}")
    win = _gaussian_window()
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    mu_a = fftconvolve(a, win, mode="valid")
    mu_b = fftconvolve(b, win, mode="valid")
    var_a = fftconvolve(a * a, win, mode="valid") - mu_a**2
    var_b = fftconvolve(b * b, win, mode="valid") - mu_b**2
    cov = fftconvolve(a * b, win, mode="valid") - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ncc(a: Image, b: Image) -> float:
    """Zero-mean, unit-variance correlation of two single-channel images."""
    if a.channels != 1 or b.channels != 1:
        raise InvalidInputError("ncc expects single-channel images")
    if a.data.shape != b.data.shape:
        raise InvalidInputError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    x = a.data.ravel() - a.data.mean()
    y = b.data.ravel() - b.data.mean()
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx < 1e-12 or ny < 1e-12:
        raise UndefinedCorrelationError("zero-variance input")
    return float(np.dot(x, y) / (nx * ny))
