"""Photometric harmonization of image pairs.

Two tools, applied in pipeline order color_transfer -> histogram_match:
a per-pixel low-frequency gain field correcting exposure/color drift, and
a per-channel empirical CDF mapping mopping up the global residual.
"""

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError
from .imgcore import Image

N_BINS = 1024


def histogram_match(src: Image, ref: Image) -> Image:
    """Monotone per-channel CDF mapping of src values onto ref's distribution."""
    if src.channels != ref.channels:
        raise InvalidInputError(
            f"channel mismatch: {src.channels} vs {ref.channels}")
    edges = np.linspace(0.0, 1.0, N_BINS + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    out = np.empty_like(src.data)
    for c in range(src.channels):
        s = src.data[c].ravel()
        r = ref.data[c].ravel()
        src_hist, _ = np.histogram(s, bins=edges)
        ref_hist, _ = np.histogram(r, bins=edges)
        # mid-cumulative CDFs: (F(v-) + F(v))/2, so a point mass sits at
        # quantile 0.5 (maps to the reference median) and matching an image
        # to itself is the identity up to bin resolution
        src_cdf = (np.cumsum(src_hist) - 0.5 * src_hist) / s.size
        ref_cdf = (np.cumsum(ref_hist) - 0.5 * ref_hist) / r.size
        # piecewise-linear inverse of ref's CDF over its occupied bins,
        # evaluated at src's CDF values
        occ = ref_hist > 0
        lut = np.interp(src_cdf, ref_cdf[occ], centers[occ])
        quant = np.clip((s * N_BINS).astype(np.int64), 0, N_BINS - 1)
        out[c] = lut[quant].reshape(src.data[c].shape)
    return Image(np.clip(out, 0.0, 1.0))


def color_transfer(src: Image, ref: Image, blur_sigma: float = 15.0) -> Image:
    """Pixel-wise linear correction: src scaled by a blurred-ratio gain field.

    out = src * clip((G(ref)+eps)/(G(src)+eps), 0.5, 2.0), G = Gaussian blur.
    Corrects low-frequency exposure/color drift while keeping src's detail.
    """
    if src.data.shape != ref.data.shape:
        raise InvalidInputError(
            f"shape mismatch: {src.data.shape} vs {ref.data.shape}")
    eps = 1e-3
    gain = np.empty_like(src.data)
    for c in range(src.channels):
        num = ndimage.gaussian_filter(ref.data[c], blur_sigma) + eps
        den = ndimage.gaussian_filter(src.data[c], blur_sigma) + eps
        gain[c] = np.clip(num / den, 0.5, 2.0)
    return Image(np.clip(src.data * gain, 0.0, 1.0))
