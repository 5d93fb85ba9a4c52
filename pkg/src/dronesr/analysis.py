"""Domain-gap analysis: average radial power spectral density and blur-kernel
estimation between LR/HR observations.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .imgcore import Image, crop, cubic_kernel, resize_bicubic, rgb_to_y

PSD_TILE = 512
PSD_BINS = 64


@dataclass(frozen=True)
class RadialPSD:
    bin_centers: np.ndarray  # normalized spatial frequency in [0, 0.5]
    log_power: np.ndarray    # mean log10 power per bin
    image_count: int
    notes: tuple = ()


@dataclass(frozen=True)
class BlurKernel:
    weights: np.ndarray  # (k, k), sums to 1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
            raise InvalidInputError(f"kernel must be odd square, got {w.shape}")
        object.__setattr__(self, "weights", w)

    @property
    def support(self):
        return self.weights.shape[0]

    def centroid(self):
        k = self.support
        yy, xx = np.mgrid[0:k, 0:k]
        s = self.weights.sum()
        return (float((self.weights * yy).sum() / s),
                float((self.weights * xx).sum() / s))

    def second_moment(self):
        """Mean squared radius about the centroid (kernel width statistic)."""
        cy, cx = self.centroid()
        k = self.support
        yy, xx = np.mgrid[0:k, 0:k]
        r2 = (yy - cy) ** 2 + (xx - cx) ** 2
        return float((self.weights * r2).sum() / self.weights.sum())


def _luma(img: Image):
    return img.data[0] if img.channels == 1 else rgb_to_y(img).data[0]


def _center_tile(arr, size):
    h, w = arr.shape
    noted = False
    if h < size or w < size:
        arr = resize_bicubic(Image(arr[None]), max(h, size), max(w, size)).data[0]
        h, w = arr.shape
        noted = True
    top, left = (h - size) // 2, (w - size) // 2
    return arr[top:top + size, left:left + size], noted


def radial_psd(images, crop_fraction: float = 1.0) -> RadialPSD:
    """Average radially-binned log power spectrum over a set of images.

    Per image: luminance, center crop by crop_fraction (FOV normalization
    across altitudes), Hann window, 2-D FFT on a 512x512 center tile,
    |F|^2/N radially binned into 64 bins of normalized frequency [0, 0.5].
    """
    images = list(images)
    if not images:
        raise InvalidInputError("radial_psd needs at least one image")
    if not 0.0 < crop_fraction <= 1.0:
        raise InvalidInputError(f"crop_fraction must be in (0,1], got {crop_fraction}")
    hann = np.hanning(PSD_TILE)
    window = np.outer(hann, hann)
    fy = np.fft.fftfreq(PSD_TILE)
    r = np.sqrt(fy[:, None] ** 2 + fy[None, :] ** 2)
    bin_idx = np.minimum((r / 0.5 * PSD_BINS).astype(np.int64), PSD_BINS)
    counts = np.bincount(bin_idx.ravel(), minlength=PSD_BINS + 1)[:PSD_BINS]
    curves = []
    notes = []
    for i, img in enumerate(images):
        lum = _luma(img)
        if crop_fraction < 1.0:
            ch = max(int(round(lum.shape[0] * crop_fraction)), 8)
            cw = max(int(round(lum.shape[1] * crop_fraction)), 8)
            top, left = (lum.shape[0] - ch) // 2, (lum.shape[1] - cw) // 2
            lum = lum[top:top + ch, left:left + cw]
        tile, noted = _center_tile(lum, PSD_TILE)
        if noted:
            notes.append(f"image {i} smaller than {PSD_TILE} tile; resized")
        spec = np.fft.fft2(tile * window)
        power = (spec.real**2 + spec.imag**2) / tile.size
        sums = np.bincount(bin_idx.ravel(), weights=power.ravel(),
                           minlength=PSD_BINS + 1)[:PSD_BINS]
        curves.append(np.log10(sums / counts + 1e-20))
    centers = (np.arange(PSD_BINS) + 0.5) * (0.5 / PSD_BINS)
    return RadialPSD(bin_centers=centers, log_power=np.mean(curves, axis=0),
                     image_count=len(images), notes=tuple(notes))


def _as_lrup_hr(pair):
    """Accepts a PatchPair-like object or an (lr, hr) Image tuple."""
    if isinstance(pair, tuple):
        lr, hr = pair
    else:
        lr, hr = pair.lr_patch, pair.hr_patch
    if (lr.height, lr.width) != (hr.height, hr.width):
        lr = resize_bicubic(lr, hr.height, hr.width)
    return _luma(lr), _luma(hr)


def estimate_blur_kernel(pairs, support: int = 21, lam: float = 1e-3) -> BlurKernel:
    """Fourier-domain Tikhonov estimate of k in LRup = HR (x) k, averaged over pairs.

    Per pair: k_hat = conj(H) * L / (|H|^2 + lam * mean|H|^2); the spatial kernel
    is cropped to `support`, averaged, centered, and normalized to sum 1.
    """
    pairs = list(pairs)
    if not pairs:
        raise InvalidInputError("estimate_blur_kernel needs at least one pair")
    if support % 2 == 0 or support < 3:
        raise InvalidInputError(f"support must be odd >= 3, got {support}")
    if lam <= 0:
        raise InvalidInputError("lambda must be positive")
    acc = np.zeros((support, support))
    half = support // 2
    for pair in pairs:
        lrup, hr = _as_lrup_hr(pair)
        hf = np.fft.fft2(hr)
        lf = np.fft.fft2(lrup)
        h2 = hf.real**2 + hf.imag**2
        # regularization scale: mean spectral power excluding the DC term,
        # which otherwise dwarfs everything for non-zero-mean images
        m = (h2.sum() - h2[0, 0]) / (h2.size - 1)
        k_hat = np.conj(hf) * lf / (h2 + lam * m)
        k = np.fft.fftshift(np.fft.ifft2(k_hat).real)
        cy, cx = k.shape[0] // 2, k.shape[1] // 2
        acc += k[cy - half:cy + half + 1, cx - half:cx + half + 1]
    acc /= len(pairs)
    return _center_and_normalize(acc)


def _center_and_normalize(weights):
    """Roll the kernel so its (magnitude) centroid sits on the center tap."""
    k = weights.shape[0]
    half = k // 2
    mag = np.abs(weights)
    yy, xx = np.mgrid[0:k, 0:k]
    cy = (mag * yy).sum() / mag.sum()
    cx = (mag * xx).sum() / mag.sum()
    weights = np.roll(weights, (half - int(round(cy)), half - int(round(cx))), axis=(0, 1))
    s = weights.sum()
    if abs(s) < 1e-12:
        raise InvalidInputError("kernel estimate sums to ~0; cannot normalize")
    return BlurKernel(weights / s)


def bicubic_reference_kernel(scale: float, support: int = 21) -> BlurKernel:
    """The antialiased a=-0.5 cubic low-pass at the given downscaling factor,
    sampled on the integer grid and normalized."""
    if scale < 1:
        raise InvalidInputError(f"scale must be >= 1, got {scale}")
    if support % 2 == 0 or support < 3:
        raise InvalidInputError(f"support must be odd >= 3, got {support}")
    half = support // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    w1d = cubic_kernel(x, 1.0 / scale)
    k = np.outer(w1d, w1d)
    return BlurKernel(k / k.sum())


def export_psd_csv(path, psd: RadialPSD):
    with open(path, "w") as f:
        f.write("frequency,log10_power\n")
        for c, p in zip(psd.bin_centers, psd.log_power):
            f.write(f"{c:.6f},{p:.6f}\n")


def export_psd_svg(path, curves, width=640, height=420):
    """Minimal line-plot SVG. curves: list of (label, RadialPSD)."""
    pad = 45
    all_y = np.concatenate([p.log_power for _, p in curves])
    y0, y1 = float(all_y.min()), float(all_y.max())
    if y1 - y0 < 1e-9:
        y1 = y0 + 1.0
    colors = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
              "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{pad}" y1="{height-pad}" x2="{width-pad}" y2="{height-pad}" stroke="black"/>',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height-pad}" stroke="black"/>']
    for i, (label, psd) in enumerate(curves):
        pts = []
        for cx, cy in zip(psd.bin_centers, psd.log_power):
            px = pad + (cx / 0.5) * (width - 2 * pad)
            py = height - pad - (cy - y0) / (y1 - y0) * (height - 2 * pad)
            pts.append(f"{px:.1f},{py:.1f}")
        color = colors[i % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{color}" points="{" ".join(pts)}"/>')
        parts.append(f'<text x="{width-pad-150}" y="{pad + 16*i}" fill="{color}" '
                     f'font-size="12">{label}</text>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts))


def export_kernel_csv(path, kernel: BlurKernel):
    np.savetxt(path, kernel.weights, delimiter=",", fmt="%.8e")


def export_kernel_png(path, kernel: BlurKernel):
    from .imgio import write_image
    w = kernel.weights
    lo, hi = w.min(), w.max()
    norm = (w - lo) / (hi - lo) if hi > lo else np.zeros_like(w)
    write_image(path, Image(norm[None]))
