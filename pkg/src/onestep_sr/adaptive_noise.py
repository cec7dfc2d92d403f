"""Gradient-adaptive latent noise.

The low-quality input's Sobel gradient map is patch-averaged and pushed
through a clamped linear ramp, giving a per-region noise weight in
[w_min, w_max].  Textured regions receive full-strength noise so the
denoiser can regenerate detail there; flat regions stay near w_min so
they are not hallucinated over.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, ShapeError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()

DEFAULT_PATCH = 16


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Luma conversion 0.299 R + 0.587 G + 0.114 B for an H x W x 3 image."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected an H x W x 3 RGB image, got shape {img.shape}")
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    return LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b


def sobel_gradient(gray: np.ndarray) -> np.ndarray:
    """Sobel gradient magnitude with replicate-padded borders."""
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim != 2:
        raise ShapeError(f"expected a single-channel image, got shape {gray.shape}")
    gx = ndimage.correlate(gray, SOBEL_X, mode="nearest")
    gy = ndimage.correlate(gray, SOBEL_Y, mode="nearest")
    return np.hypot(gx, gy)


def patch_average(grad: np.ndarray, patch: int = DEFAULT_PATCH) -> np.ndarray:
    """Mean of each non-overlapping patch x patch block."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.ndim != 2:
        raise ShapeError(f"expected a 2-D map, got shape {grad.shape}")
    h, w = grad.shape
    if patch < 1 or h % patch or w % patch:
        raise ShapeError(f"map shape {grad.shape} not divisible by patch {patch}")
    return grad.reshape(h // patch, patch, w // patch, patch).mean(axis=(1, 3))


@dataclass(frozen=True)
class PiecewiseParams:
    """Clamped linear ramp mapping patch-mean gradients to noise weights."""

    g_lo: float = 0.02
    g_hi: float = 0.25
    w_min: float = 0.5
    w_max: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.g_lo < self.g_hi):
            raise ConfigError(f"need 0 <= g_lo < g_hi, got ({self.g_lo}, {self.g_hi})")
        if not (0.0 < self.w_min <= self.w_max):
            raise ConfigError(f"need 0 < w_min <= w_max, got ({self.w_min}, {self.w_max})")


def piecewise_map(means: np.ndarray, params: PiecewiseParams = PiecewiseParams()) -> np.ndarray:
    """w_min below g_lo, w_max above g_hi, linear in between."""
    means = np.asarray(means, dtype=np.float64)
    ramp = np.clip((means - params.g_lo) / (params.g_hi - params.g_lo), 0.0, 1.0)
    return params.w_min + ramp * (params.w_max - params.w_min)


def weight_map_for_image(
    img: np.ndarray,
    patch: int = DEFAULT_PATCH,
    params: PiecewiseParams = PiecewiseParams(),
) -> np.ndarray:
    """Full gradient -> patch mean -> ramp chain for an RGB image."""
    gray = img if np.asarray(img).ndim == 2 else to_grayscale(img)
    return piecewise_map(patch_average(sobel_gradient(gray), patch), params)


def resample_weights(weights: np.ndarray, spatial: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resample of the weight grid to the latent grid.

    One grid size must be an integer multiple of the other.
    """
    weights = np.asarray(weights, dtype=np.float64)
    h, w = spatial
    gh, gw = weights.shape
    if h % gh == 0 and w % gw == 0:
        return np.repeat(np.repeat(weights, h // gh, axis=0), w // gw, axis=1)
    if gh % h == 0 and gw % w == 0:
        fh, fw = gh // h, gw // w
        return weights[fh // 2 :: fh, fw // 2 :: fw]
    raise ShapeError(f"weight grid {weights.shape} incompatible with latent spatial {spatial}")


def synthesize_noise(
    weights: np.ndarray,
    latent_shape: tuple[int, int, int],
    rng: np.random.Generator,
) -> np.ndarray:
    """Zero-mean Gaussian noise whose per-cell std equals the local weight.

    ``latent_shape`` is (h, w, channels); the weight grid is broadcast over
    the channel axis after nearest-neighbor resampling to (h, w).
    """
    if len(latent_shape) != 3:
        raise ShapeError(f"latent_shape must be (h, w, c), got {latent_shape}")
    h, w, c = latent_shape
    scale = resample_weights(weights, (h, w))
    eps = rng.standard_normal((h, w, c))
    return scale[..., None] * eps


def weight_map_to_png(weights: np.ndarray, path) -> None:
    """Debug export: weight values scaled by 255 into a grayscale PNG."""
    from PIL import Image

    arr = np.asarray(weights, dtype=np.float64)
    img = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path)
