"""End-to-end one-step restoration path shared by training, inference, eval.

Convention: numpy images are H x W x C float32 in [0, 1]; torch tensors
are (B, C, H, W).  The low-quality input is bicubically upsampled to the
output resolution before entering the model, so the VAE, the gradient
weight map, and the modulation block all operate at that resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import adaptive_noise
from .adaptive_noise import PiecewiseParams
from .dataset import AnnotatedSample, token_id
from .errors import ShapeError
from .schedule import NoiseSchedule


def to_tensor(img: np.ndarray) -> torch.Tensor:
    """H x W x C numpy image to (C, H, W) float32 tensor."""
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim != 3:
        raise ShapeError(f"expected H x W x C image, got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr)).permute(2, 0, 1)


def to_image(tensor: torch.Tensor) -> np.ndarray:
    """(C, H, W) or (1, C, H, W) tensor to H x W x C float32 in [0, 1]."""
    if tensor.ndim == 4:
        if tensor.shape[0] != 1:
            raise ShapeError(f"expected a single image, got batch {tensor.shape[0]}")
        tensor = tensor[0]
    arr = tensor.detach().cpu().permute(1, 2, 0).numpy()
    return np.clip(arr, 0.0, 1.0).astype(np.float32)


def upsample_image(lq: np.ndarray, factor: int) -> np.ndarray:
    """Bicubic upsample of an H x W x 3 image, clipped to [0, 1]."""
    t = to_tensor(lq)[None]
    out = F.interpolate(t, scale_factor=factor, mode="bicubic", align_corners=False)
    return to_image(out)


def tokens_for_prompt(prompt) -> list[int]:
    """Token ids for a tagged prompt; empty prompts map to the null token."""
    ids = [token_id(word) for word, _tag in prompt]
    return ids or [0]


def pad_token_batch(token_lists: list[list[int]]) -> torch.Tensor:
    width = max((len(t) for t in token_lists), default=1) or 1
    out = torch.zeros(len(token_lists), width, dtype=torch.long)
    for i, ids in enumerate(token_lists):
        out[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
    return out


@dataclass
class PreparedSample:
    """Model-ready view of one dataset record."""

    lq_up: np.ndarray
    weight_grid: np.ndarray
    token_ids: list[int]
    hq: np.ndarray | None = None
    sample: AnnotatedSample | None = None


def prepare_sample(
    sample: AnnotatedSample,
    factor: int = 4,
    patch: int = adaptive_noise.DEFAULT_PATCH,
    params: PiecewiseParams = PiecewiseParams(),
) -> PreparedSample:
    lq_up = upsample_image(sample.lq, factor)
    return PreparedSample(
        lq_up=lq_up,
        weight_grid=adaptive_noise.weight_map_for_image(lq_up, patch, params),
        token_ids=tokens_for_prompt(sample.prompt),
        hq=sample.hq,
        sample=sample,
    )


def prepare_lq_image(
    lq: np.ndarray,
    prompt=(),
    factor: int = 4,
    patch: int = adaptive_noise.DEFAULT_PATCH,
    params: PiecewiseParams = PiecewiseParams(),
) -> PreparedSample:
    lq_up = upsample_image(lq, factor)
    return PreparedSample(
        lq_up=lq_up,
        weight_grid=adaptive_noise.weight_map_for_image(lq_up, patch, params),
        token_ids=tokens_for_prompt(prompt),
    )


def latent_noise_batch(
    prepared: list[PreparedSample],
    latent_hw: tuple[int, int],
    latent_channels: int,
    rng: np.random.Generator,
    adaptive: bool = True,
) -> torch.Tensor:
    """Per-sample latent noise, gradient-weighted unless ``adaptive`` is off."""
    h, w = latent_hw
    draws = []
    for p in prepared:
        if adaptive:
            eps = adaptive_noise.synthesize_noise(p.weight_grid, (h, w, latent_channels), rng)
        else:
            eps = rng.standard_normal((h, w, latent_channels))
        draws.append(eps.transpose(2, 0, 1))
    return torch.from_numpy(np.stack(draws).astype(np.float32))


@dataclass
class RestoreResult:
    images: torch.Tensor
    latents: torch.Tensor
    z_lq: torch.Tensor
    eps_pred: torch.Tensor
    attn_maps: list[torch.Tensor]
    noise: torch.Tensor


def restore_batch(
    vae,
    unet,
    schedule: NoiseSchedule,
    prepared: list[PreparedSample],
    t_s: int,
    rng: np.random.Generator,
    adaptive: bool = True,
    use_lqfm: bool = True,
) -> RestoreResult:
    """Single forward-noising + recovery pass over a batch."""
    lq_up = torch.stack([to_tensor(p.lq_up) for p in prepared])
    tokens = pad_token_batch([p.token_ids for p in prepared])
    z_lq = vae.encode(lq_up)
    eps = latent_noise_batch(
        prepared, tuple(z_lq.shape[-2:]), z_lq.shape[1], rng, adaptive=adaptive
    ).to(z_lq.dtype)
    z_t = schedule.forward_diffuse(z_lq, eps, t_s)
    use_mod = use_lqfm and unet.modulator is not None
    eps_pred, attn_maps = unet.predict(
        z_t, t_s, tokens, schedule, lqfm_input=lq_up if use_mod else None
    )
    z_hat = schedule.reverse_recover(z_t, eps_pred, t_s)
    images = vae.decode(z_hat)
    return RestoreResult(
        images=images, latents=z_hat, z_lq=z_lq, eps_pred=eps_pred,
        attn_maps=attn_maps, noise=eps,
    )
