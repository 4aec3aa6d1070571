"""PSNR and SSIM for images in [0, 1]."""

import numpy as np
from scipy import ndimage

from .errors import DimensionError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(r, s):
    r = np.asarray(getattr(r, "data", r), dtype=np.float64)
    s = np.asarray(getattr(s, "data", s), dtype=np.float64)
    if r.shape != s.shape:
        raise DimensionError(f"metric inputs differ in shape: {r.shape} vs {s.shape}")
    return r, s


def psnr(r, s):
    """10 * log10(1 / MSE); ``inf`` for identical images."""
    r, s = _pair(r, s)
    mse = float(np.mean((r - s) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _window_size(h, w):
    size = min(SSIM_WINDOW, h, w)
    return size if size % 2 else size - 1


def _filter_valid(img, g):
    r = len(g) // 2
    out = ndimage.correlate1d(img, g, axis=-2, mode="constant")
    out = ndimage.correlate1d(out, g, axis=-1, mode="constant")
    return out[..., r:img.shape[-2] - r, r:img.shape[-1] - r]


def ssim_map(r, s):
    """Per-pixel SSIM over every fully contained Gaussian window (trailing two axes)."""
    r, s = _pair(r, s)
    h, w = r.shape[-2:]
    g = gaussian_window(_window_size(h, w))
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mu_r, mu_s = _filter_valid(r, g), _filter_valid(s, g)
    var_r = _filter_valid(r * r, g) - mu_r ** 2
    var_s = _filter_valid(s * s, g) - mu_s ** 2
    cov = _filter_valid(r * s, g) - mu_r * mu_s
    return ((2 * mu_r * mu_s + c1) * (2 * cov + c2)) / ((mu_r ** 2 + mu_s ** 2 + c1) * (var_r + var_s + c2))


def ssim(r, s):
    """Mean single-scale SSIM (11x11 Gaussian window, sigma 1.5, data range 1).

    Images smaller than 11 pixels on a side use the largest odd window that fits.
    """
    return float(np.mean(ssim_map(r, s)))
