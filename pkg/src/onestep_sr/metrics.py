"""Fidelity metrics and sharpness proxies.

PSNR and SSIM are computed on the luma channel with peak 1.0, matching
how super-resolution results are conventionally reported.  hf_energy is
a no-reference sharpness proxy: the mean Sobel gradient magnitude over
an optional region mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .adaptive_noise import sobel_gradient, to_grayscale
from .errors import ConfigError, ShapeError

PSNR_CAP_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass
class MetricReport:
    psnr_y: float
    ssim: float
    hf_energy: float
    in_mask_attention: float | None = None


def _luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return to_grayscale(img)
    if img.ndim == 2:
        return img
    raise ShapeError(f"expected an image, got shape {img.shape}")


def psnr_y(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB on luma, capped at 100 dB."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((_luma(a) - _luma(b)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity on luma, Gaussian 11x11 window, sigma 1.5.

    Window statistics use valid-mode filtering, so inputs must be at least
    11 pixels on each side.
    """
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    x, y = _luma(a), _luma(b)
    if min(x.shape) < SSIM_WINDOW:
        raise ShapeError(f"images must be at least {SSIM_WINDOW}px per side, got {x.shape}")
    win = gaussian_window()

    def filt(img):
        return signal.correlate2d(img, win, mode="valid")

    mu_x, mu_y = filt(x), filt(y)
    var_x = filt(x * x) - mu_x**2
    var_y = filt(y * y) - mu_y**2
    cov = filt(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_x**2 + mu_y**2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(num / den))


def hf_energy(img: np.ndarray, region_mask: np.ndarray | None = None) -> float:
    """Mean Sobel gradient magnitude, optionally restricted to a mask."""
    mag = sobel_gradient(_luma(img))
    if region_mask is None:
        return float(mag.mean())
    mask = np.asarray(region_mask) > 0.5
    if mask.shape != mag.shape:
        raise ShapeError(f"mask shape {mask.shape} != image shape {mag.shape}")
    if not mask.any():
        raise ConfigError("region mask selects no pixels")
    return float(mag[mask].mean())
