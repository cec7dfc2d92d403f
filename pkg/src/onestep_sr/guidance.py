"""Mask-constrained text guidance.

Prompt nouns carry ground-truth region masks; the cross-attention maps
for each noun token are aggregated across layers and penalized for
attention mass that falls outside the noun's mask.  The loss is a
training-time term only; nothing here runs at inference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ShapeError, VocabError

VALIDITY_THRESHOLD = 0.005
_EPS = 1e-8


def filter_nouns(tagged_tokens) -> list[str]:
    """Order-preserving unique words tagged as nouns."""
    seen = set()
    out = []
    for word, tag in tagged_tokens:
        if tag == "noun" and word not in seen:
            seen.add(word)
            out.append(word)
    return out


def validate_mask(mask: np.ndarray, threshold: float = VALIDITY_THRESHOLD) -> bool:
    """A mask counts only if enough of its pixels are active."""
    mask = np.asarray(mask)
    return float((mask > 0.5).mean()) >= threshold


def downsample_mask(mask: np.ndarray, latent_hw: tuple[int, int]) -> np.ndarray:
    """Area-average the image-resolution mask, then binarize at 0.5."""
    mask = np.asarray(mask, dtype=np.float64)
    h, w = mask.shape
    lh, lw = latent_hw
    if h % lh or w % lw:
        raise ShapeError(f"mask shape {mask.shape} not divisible into latent grid {latent_hw}")
    pooled = mask.reshape(lh, h // lh, lw, w // lw).mean(axis=(1, 3))
    return (pooled >= 0.5).astype(np.float32)


@dataclass
class NounMaskEntry:
    token_position: int
    mask: np.ndarray
    valid: bool


def prepare_noun_masks(
    prompt,
    nouns,
    masks,
    latent_hw: tuple[int, int],
    threshold: float = VALIDITY_THRESHOLD,
) -> list[NounMaskEntry]:
    """Latent-resolution masks keyed by each noun's prompt position."""
    words = [w for w, _t in prompt]
    entries = []
    for noun in filter_nouns(prompt):
        if noun not in nouns:
            continue
        mask = downsample_mask(np.asarray(masks[list(nouns).index(noun)]), latent_hw)
        entries.append(
            NounMaskEntry(
                token_position=words.index(noun),
                mask=mask,
                valid=validate_mask(mask, threshold),
            )
        )
    return entries


def aggregate_attention(
    attn_maps: list[torch.Tensor],
    token_position: int,
    latent_hw: tuple[int, int],
) -> torch.Tensor:
    """Layer-averaged attention map for one token at latent resolution.

    Each per-layer map is (h, w, L); the token's column is bilinearly
    resampled to ``latent_hw`` and layers are weighted equally.
    """
    if not attn_maps:
        raise ShapeError("need at least one attention map")
    resampled = []
    for amap in attn_maps:
        if token_position >= amap.shape[-1]:
            raise VocabError(
                f"token position {token_position} not present in attention map "
                f"with {amap.shape[-1]} tokens"
            )
        column = amap[..., token_position]
        if column.shape != tuple(latent_hw):
            column = F.interpolate(
                column[None, None], size=tuple(latent_hw),
                mode="bilinear", align_corners=False,
            )[0, 0]
        resampled.append(column)
    return torch.stack(resampled).mean(dim=0)


def positive_area_loss(atts: list[torch.Tensor], masks: list[torch.Tensor]) -> torch.Tensor:
    """Mean fraction of attention mass falling outside each noun's mask.

    Zero when every map's mass lies inside its mask; an empty list is a
    no-op and contributes neither loss nor gradient.
    """
    if len(atts) != len(masks):
        raise ShapeError(f"{len(atts)} attention maps vs {len(masks)} masks")
    if not atts:
        return torch.zeros(())
    terms = []
    for att, mask in zip(atts, masks):
        if att.shape != mask.shape:
            raise ShapeError(f"attention {tuple(att.shape)} vs mask {tuple(mask.shape)}")
        inside = (att * mask).sum()
        total = att.sum() + _EPS
        terms.append(1.0 - inside / total)
    return torch.stack(terms).mean()


def in_mask_fraction(att: torch.Tensor, mask: torch.Tensor) -> float:
    att = att.detach()
    total = float(att.sum())
    if total <= 0.0:
        return 0.0
    return float((att * mask).sum()) / (total + _EPS)


def sample_attention_stats(
    attn_maps: list[torch.Tensor],
    entries: list[NounMaskEntry],
    latent_hw: tuple[int, int],
) -> tuple[torch.Tensor, list[torch.Tensor], list[torch.Tensor]]:
    """Loss and per-noun (map, mask) pairs for one sample's valid nouns."""
    atts, masks = [], []
    for entry in entries:
        if not entry.valid:
            continue
        att = aggregate_attention(attn_maps, entry.token_position, latent_hw)
        atts.append(att)
        masks.append(torch.from_numpy(entry.mask).to(att.dtype))
    return positive_area_loss(atts, masks), atts, masks


def attention_debug_png(att: torch.Tensor, path) -> None:
    """Normalized grayscale dump of one aggregated attention map."""
    from PIL import Image

    arr = att.detach().cpu().numpy().astype(np.float64)
    peak = arr.max()
    if peak > 0:
        arr = arr / peak
    Image.fromarray(np.clip(np.rint(arr * 255), 0, 255).astype(np.uint8), mode="L").save(path)
